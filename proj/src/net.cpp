#include "dforge/net.hpp"

#include <algorithm>

#include "dforge/rng.hpp"

namespace dforge::net {

std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::efn: return "efn";
    case Ablation::pd: return "pd";
    case Ablation::pd_iacc: return "pd_iacc";
    case Ablation::full: return "full";
  }
  return "?";
}

Ablation parse_ablation(std::string_view s) {
  for (auto a : {Ablation::efn, Ablation::pd, Ablation::pd_iacc, Ablation::full})
    if (ablation_name(a) == s) return a;
  throw InvalidArgument("unknown ablation tag '" + std::string(s) +
                        "' (expected efn, pd, pd_iacc or full)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw InvalidArgument(std::string("model.") + key + " must be positive");
  };
  positive(d, "d");
  positive(encoder_depth, "encoder_depth");
  positive(decoder_depth, "decoder_depth");
  positive(image_size, "image_size");
  positive(classifier_hidden, "classifier_hidden");
  if (encoder_depth < 3)
    throw InvalidArgument("model.encoder_depth must be at least 3 (three stride-2 stages)");
  if (image_size % 8 != 0) throw InvalidArgument("model.image_size must be divisible by 8");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"encoder_depth", encoder_depth},
          {"decoder_depth", decoder_depth},
          {"image_size", image_size},
          {"classifier_hidden", classifier_hidden},
          {"seed", seed},
          {"freeze_encoder", freeze_encoder}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.encoder_depth = j.at("encoder_depth").get<int>();
  c.decoder_depth = j.at("decoder_depth").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.classifier_hidden = j.at("classifier_hidden").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.freeze_encoder = j.value("freeze_encoder", false);
  c.validate();
  return c;
}

namespace {

int encoder_channels(int d, int layer) {
  if (layer >= 2) return d;
  return std::max(d >> (2 - layer), std::min(d, 8));
}

int decoder_channels(int d, int stage) { return std::max(d >> (stage + 1), std::min(d, 8)); }

}  // namespace

template <typename T>
typename Model<T>::Encoder Model<T>::make_encoder(const std::string& name) {
  Encoder e;
  int in = 3;
  for (int i = 0; i < config_.encoder_depth; ++i) {
    const int out = encoder_channels(config_.d, i);
    e.convs.push_back(Conv<T>::make(params_, name + ".conv" + std::to_string(i), in, out, 3,
                                    i < 3 ? 2 : 1, config_.seed, !config_.freeze_encoder));
    e.norms.push_back(GroupNorm<T>::make(params_, name + ".norm" + std::to_string(i), out,
                                         !config_.freeze_encoder));
    in = out;
  }
  return e;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, Ablation ablation)
    : config_(config), ablation_(ablation) {
  config_.validate();
  const int64_t d = config_.d, s = config_.seed;
  enc_[0] = make_encoder("enc1");
  enc_[1] = make_encoder("enc2");
  if (has_separator(ablation_)) {
    sep_[0] = Conv<T>::make(params_, "sep.conv0", 2 * d, 2 * d, 3, 1, s);
    sep_[1] = Conv<T>::make(params_, "sep.conv1", 2 * d, 2 * d, 3, 1, s);
    const char* heads[4] = {"sep.id1", "sep.art1", "sep.id2", "sep.art2"};
    for (int i = 0; i < 4; ++i) sep_heads_[i] = Conv<T>::make(params_, heads[i], 2 * d, d, 1, 1, s);
  }
  if (has_iacc(ablation_)) {
    dcam_[0] = iacc::Dcam<T>::make(params_, "dcam1", d, s);
    dcam_[1] = iacc::Dcam<T>::make(params_, "dcam2", d, s);
  }
  if (has_separator(ablation_)) {
    style_ = CrossAttention<T>::make(params_, "dec.style", 2 * d, 2 * d, d, 2 * d, s);
    style_out_ = Conv<T>::make(params_, "dec.style_out", 2 * d, 2 * d, 1, 1, s);
    stem_ = Conv<T>::make(params_, "dec.stem", 2 * d, d, 3, 1, s);
    int in = static_cast<int>(d);
    for (int st = 0; st < 3; ++st) {
      const int out = decoder_channels(config_.d, st);
      std::vector<Conv<T>> stage;
      for (int k = 0; k < config_.decoder_depth; ++k) {
        stage.push_back(Conv<T>::make(
            params_, "dec.up" + std::to_string(st) + ".conv" + std::to_string(k), in, out, 3, 1, s));
        in = out;
      }
      up_.push_back(std::move(stage));
    }
    to_rgb_ = Conv<T>::make(params_, "dec.rgb", in, 3, 3, 1, s);
  }
  fc1_ = Dense<T>::make(params_, "cls.fc1", 2 * d, config_.classifier_hidden, s);
  fc2_ = Dense<T>::make(params_, "cls.fc2", config_.classifier_hidden, 1, s);
}

template <typename T>
void Model<T>::check_images(const Var<T>& images) const {
  const auto& sh = images.shape();
  if (sh.size() != 4 || sh[1] != 3 || sh[2] != config_.image_size || sh[3] != config_.image_size)
    throw InvalidArgument("expected images [B,3," + std::to_string(config_.image_size) + "," +
                          std::to_string(config_.image_size) + "], got " + shape_str(sh));
}

template <typename T>
void Model<T>::check_feature(const Var<T>& f, int64_t channels, const char* what) const {
  const auto& sh = f.shape();
  const int64_t h = config_.feature_size();
  if (sh.size() != 4 || sh[1] != channels || sh[2] != h || sh[3] != h)
    throw InvalidArgument(std::string(what) + ": expected [B," + std::to_string(channels) + "," +
                          std::to_string(h) + "," + std::to_string(h) + "], got " + shape_str(sh));
}

template <typename T>
Var<T> Model<T>::run_encoder(const Encoder& e, const Var<T>& x) const {
  Var<T> h = x;
  for (size_t i = 0; i < e.convs.size(); ++i) h = ag::silu(e.norms[i](e.convs[i](h)));
  return h;
}

template <typename T>
std::pair<Var<T>, Var<T>> Model<T>::encode_identities(const Var<T>& images) const {
  check_images(images);
  return {run_encoder(enc_[0], images), run_encoder(enc_[1], images)};
}

template <typename T>
Separated<T> Model<T>::separate_artifacts(const Var<T>& id1, const Var<T>& id2) const {
  if (!has_separator(ablation_))
    throw InvalidArgument("separator is not part of the efn ablation");
  require_same_shape(id1.shape(), id2.shape(), "separate_artifacts");
  check_feature(id1, config_.d, "separate_artifacts");
  auto h = ag::concat<T>({id1, id2}, 1);
  h = ag::silu(sep_[0](h));
  h = ag::silu(sep_[1](h));
  Separated<T> s;
  s.id_raw[0] = sep_heads_[0](h);
  s.art_raw[0] = sep_heads_[1](h);
  s.id_raw[1] = sep_heads_[2](h);
  s.art_raw[1] = sep_heads_[3](h);
  return s;
}

template <typename T>
Var<T> Model<T>::dcam_gate(int branch, const Var<T>& id_raw, const Var<T>& art_raw) const {
  if (!has_iacc(ablation_))
    throw InvalidArgument("correlation gate is not part of the " +
                          std::string(ablation_name(ablation_)) + " ablation");
  return dcam_[branch](id_raw, art_raw);
}

template <typename T>
void Model<T>::aggregate(DisentangledBundle<T>& b) {
  if (!b.id_pure[0].defined()) throw InvalidArgument("aggregate needs pure features");
  require_same_shape(b.id_pure[0].shape(), b.id_pure[1].shape(), "aggregate");
  require_same_shape(b.art_pure[0].shape(), b.art_pure[1].shape(), "aggregate");
  b.ID = ag::concat<T>({b.id_pure[0], b.id_pure[1]}, 1);
  b.ART = ag::concat<T>({b.art_pure[0], b.art_pure[1]}, 1);
}

template <typename T>
Var<T> Model<T>::decode_face(const Var<T>& ID, const Var<T>& ART) const {
  if (!has_separator(ablation_)) throw InvalidArgument("decoder is not part of the efn ablation");
  require_same_shape(ID.shape(), ART.shape(), "decode_face");
  check_feature(ID, 2 * config_.d, "decode_face");
  auto h = ID + style_out_(style_(ID, ART));
  h = ag::silu(stem_(h));
  for (const auto& stage : up_) {
    h = ag::upsample2x(h);
    for (const auto& c : stage) h = ag::silu(c(h));
  }
  return ag::sigmoid(to_rgb_(h));
}

template <typename T>
Var<T> Model<T>::classify(const Var<T>& ART) const {
  check_feature(ART, 2 * config_.d, "classify");
  auto h = ag::silu(fc1_(ag::global_avg_pool(ART)));
  auto p = ag::sigmoid(fc2_(h));
  return ag::reshape(p, Shape{ART.dim(0)});
}

namespace {

// Purifies every image on its own statistics, as at inference.
template <typename T>
Var<T> purify_each(const Var<T>& feat, const Var<T>& gate, uint64_t seed, iacc::NoiseMode mode) {
  const int64_t b = feat.dim(0);
  if (b == 1) return iacc::purify(feat, gate, derive_seed(seed, "sample", 0), mode);
  std::vector<Var<T>> parts;
  for (int64_t i = 0; i < b; ++i)
    parts.push_back(iacc::purify(ag::slice(feat, 0, i, i + 1), ag::slice(gate, 0, i, i + 1),
                                 derive_seed(seed, "sample", static_cast<uint64_t>(i)), mode));
  return ag::concat(parts, 0);
}

}  // namespace

template <typename T>
DisentangledBundle<T> Model<T>::make_bundle(const std::pair<Var<T>, Var<T>>& encoded,
                                            const std::optional<Separated<T>>& separated,
                                            int64_t begin, int64_t end, uint64_t noise_seed,
                                            iacc::NoiseMode mode) const {
  const bool whole = begin == 0 && end == encoded.first.dim(0);
  auto part = [&](const Var<T>& v) { return whole ? v : ag::slice(v, 0, begin, end); };
  DisentangledBundle<T> b;
  b.id_blend = {part(encoded.first), part(encoded.second)};
  if (!has_separator(ablation_)) return b;
  if (!separated) throw InvalidArgument("make_bundle: separator output missing");
  for (int n = 0; n < 2; ++n) {
    b.id_raw[n] = part(separated->id_raw[n]);
    b.art_raw[n] = part(separated->art_raw[n]);
    if (has_iacc(ablation_)) {
      b.gate[n] = dcam_[n](b.id_raw[n], b.art_raw[n]);
      b.id_pure[n] = purify_each(b.id_raw[n], b.gate[n], derive_seed(noise_seed, "branch", n, 0), mode);
      b.art_pure[n] =
          purify_each(b.art_raw[n], b.gate[n], derive_seed(noise_seed, "branch", n, 1), mode);
    } else {
      b.id_pure[n] = b.id_raw[n];
      b.art_pure[n] = b.art_raw[n];
    }
  }
  aggregate(b);
  return b;
}

template <typename T>
DisentangledBundle<T> Model<T>::disentangle(const Var<T>& images, uint64_t noise_seed,
                                            iacc::NoiseMode mode) const {
  auto enc = encode_identities(images);
  std::optional<Separated<T>> sep;
  if (has_separator(ablation_)) sep = separate_artifacts(enc.first, enc.second);
  return make_bundle(enc, sep, 0, images.dim(0), noise_seed, mode);
}

template <typename T>
Var<T> Model<T>::classifier_input(const DisentangledBundle<T>& b) {
  if (b.ART.defined()) return b.ART;
  return ag::concat<T>({b.id_blend[0], b.id_blend[1]}, 1);
}

template class Model<float>;
template class Model<double>;

}  // namespace dforge::net
