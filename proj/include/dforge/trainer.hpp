#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/corpus.hpp"
#include "dforge/losses.hpp"
#include "dforge/net.hpp"
#include "dforge/optim.hpp"
#include "dforge/rng.hpp"

namespace dforge::train {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;  // real + fake images; must be even
  int steps = 3000;
  uint64_t seed = 0;
  losses::LossWeights weights;
  net::Ablation ablation = net::Ablation::full;
  int checkpoint_every = 1000;  // 0: only the final step
  std::string split = "train";

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct PairBatch {
  std::vector<std::string> real_ids;
  std::vector<std::string> fake_ids;
  bool repeated = false;  // split too small for distinct draws
};

// batch / 2 (real, fake) pairs, distinct within the batch where possible.
PairBatch sample_pairs(const corpus::CorpusManifest& manifest, const std::string& split,
                       int batch, Rng& rng);

// Decoded images of a corpus, loaded lazily and kept in memory.
template <typename T>
class ImageCache {
 public:
  ImageCache(std::filesystem::path root, const corpus::CorpusManifest& manifest)
      : root_(std::move(root)), manifest_(&manifest) {}

  const Tensor<T>& image(const std::string& sample_id);  // [3,S,S]
  Var<T> batch(const std::vector<std::string>& ids);     // [B,3,S,S]
  void preload(const std::string& split);

 private:
  std::filesystem::path root_;
  const corpus::CorpusManifest* manifest_;
  std::unordered_map<std::string, Tensor<T>> cache_;
};

template <typename T>
Tensor<T> image_to_tensor(const synth::Image& img);
template <typename T>
synth::Image tensor_to_image(const Tensor<T>& t, int64_t index = 0);

template <typename T>
struct TrainState {
  TrainConfig config;
  net::Model<T> model;
  optim::Adam<T> opt;
  int64_t step = 0;  // number of completed updates
  std::vector<losses::LossBreakdown> history;

  TrainState(const net::ModelConfig& mc, const TrainConfig& tc)
      : config(tc), model(mc, tc.ablation), opt(tc.lr) {}
};

// Everything one forward pass over a (real, fake) batch produces.
template <typename T>
struct PairForward {
  net::DisentangledBundle<T> real, fake;
  Var<T> probs;                                    // [2P]: reals then fakes
  Var<T> self_real, self_fake, cross_real, cross_fake;  // undefined for efn
  losses::LossTerms<T> terms;
};

// Seeds: IACC noise for set s (0 real, 1 fake) is derive_seed(seed, "iacc", step, s).
template <typename T>
PairForward<T> forward_pair(const net::Model<T>& model, const Var<T>& real, const Var<T>& fake,
                            uint64_t seed, int64_t step);

// One optimizer update; appends to history and returns the breakdown.
template <typename T>
losses::LossBreakdown train_step(TrainState<T>& state, const Var<T>& real, const Var<T>& fake);

// Draws the step's pairs (derive_seed(seed, "pairs", step)) and runs train_step.
template <typename T>
losses::LossBreakdown train_step(TrainState<T>& state, const corpus::CorpusManifest& manifest,
                                 ImageCache<T>& images);

template <typename T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& dir);

template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& dir,
                              std::optional<net::Ablation> expected = std::nullopt);

std::string checkpoint_name(int64_t step);

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::vector<losses::LossBreakdown> history;
};

using ProgressFn = std::function<void(int64_t step, const losses::LossBreakdown&)>;

// Trains from scratch (or from `resume`) up to config.steps, writing
// out/log.jsonl, out/ckpt-<step>/ and out/config.json (= resolved_config).
template <typename T>
RunResult run_training(const net::ModelConfig& model_config, const TrainConfig& config,
                       const std::filesystem::path& data_root, const std::filesystem::path& out,
                       const nlohmann::json& resolved_config,
                       const std::optional<std::filesystem::path>& resume = std::nullopt,
                       const ProgressFn& progress = {});

}  // namespace dforge::train
