#pragma once

// The detector: dual identity encoders, joint artifact separator, per-branch
// correlation gates, style-attention face decoder and artifact classifier.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/iacc.hpp"
#include "dforge/layers.hpp"

namespace dforge::net {

// Ladder of model variants, each a superset of the previous one.
enum class Ablation { efn, pd, pd_iacc, full };

std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view s);
inline bool has_separator(Ablation a) { return a != Ablation::efn; }
inline bool has_iacc(Ablation a) { return a == Ablation::pd_iacc || a == Ablation::full; }
inline bool has_contrastive(Ablation a) { return a == Ablation::full; }

struct ModelConfig {
  int d = 64;
  int encoder_depth = 4;  // first three stages stride 2
  int decoder_depth = 1;  // convs per upsample stage
  int image_size = 64;
  int classifier_hidden = 64;
  uint64_t seed = 0;
  bool freeze_encoder = false;

  int feature_size() const { return image_size / 8; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Separated {
  std::array<Var<T>, 2> id_raw;
  std::array<Var<T>, 2> art_raw;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, Ablation ablation);

  const ModelConfig& config() const { return config_; }
  Ablation ablation() const { return ablation_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  // images: [B,3,S,S] in [0,1] -> two [B,d,S/8,S/8] maps.
  std::pair<Var<T>, Var<T>> encode_identities(const Var<T>& images) const;
  Separated<T> separate_artifacts(const Var<T>& id1, const Var<T>& id2) const;
  Var<T> dcam_gate(int branch, const Var<T>& id_raw, const Var<T>& art_raw) const;
  // Concatenates the pure features into ID and ART.
  static void aggregate(DisentangledBundle<T>& bundle);
  Var<T> decode_face(const Var<T>& ID, const Var<T>& ART) const;
  // ART: [B,2d,h,w] -> probabilities [B].
  Var<T> classify(const Var<T>& ART) const;

  // Builds a bundle for one image set from encoder outputs, using features in
  // [begin, end) of the batch. Noise statistics are taken per image; sample k
  // mixes with noise seeded by derive_seed(branch seed, "sample", k).
  DisentangledBundle<T> make_bundle(const std::pair<Var<T>, Var<T>>& encoded,
                                    const std::optional<Separated<T>>& separated, int64_t begin,
                                    int64_t end, uint64_t noise_seed,
                                    iacc::NoiseMode mode) const;

  // Full forward for one image set (encode, separate, purify, aggregate).
  DisentangledBundle<T> disentangle(const Var<T>& images, uint64_t noise_seed,
                                    iacc::NoiseMode mode) const;

  // Classifier input for a bundle: ART, or the encoder outputs for efn.
  static Var<T> classifier_input(const DisentangledBundle<T>& b);

 private:
  struct Encoder {
    std::vector<Conv<T>> convs;
    std::vector<GroupNorm<T>> norms;
  };
  Encoder make_encoder(const std::string& name);
  Var<T> run_encoder(const Encoder& e, const Var<T>& x) const;
  void check_images(const Var<T>& images) const;
  void check_feature(const Var<T>& f, int64_t channels, const char* what) const;

  ModelConfig config_;
  Ablation ablation_;
  ParameterStore<T> params_;
  Encoder enc_[2];
  // separator
  Conv<T> sep_[2];
  Conv<T> sep_heads_[4];  // id1, art1, id2, art2
  iacc::Dcam<T> dcam_[2];
  // decoder
  CrossAttention<T> style_;
  Conv<T> style_out_;
  Conv<T> stem_;
  std::vector<std::vector<Conv<T>>> up_;
  Conv<T> to_rgb_;
  // classifier
  Dense<T> fc1_, fc2_;
};

}  // namespace dforge::net
