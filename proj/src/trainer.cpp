#include "dforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dforge::train {

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw InvalidArgument("train.lr must be positive");
  if (batch_size < 2 || batch_size % 2 != 0)
    throw InvalidArgument("train.batch_size must be even and at least 2");
  if (steps < 0) throw InvalidArgument("train.steps must be non-negative");
  if (checkpoint_every < 0) throw InvalidArgument("train.checkpoint_every must be non-negative");
  weights.validate();
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"steps", steps},
          {"seed", seed},
          {"lambda1", weights.bce},
          {"lambda2", weights.rec},
          {"lambda3", weights.contrastive},
          {"lambda4", weights.info},
          {"ablation", std::string(net::ablation_name(ablation))},
          {"checkpoint_every", checkpoint_every},
          {"split", split}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.weights.bce = j.at("lambda1").get<double>();
  c.weights.rec = j.at("lambda2").get<double>();
  c.weights.contrastive = j.at("lambda3").get<double>();
  c.weights.info = j.at("lambda4").get<double>();
  c.ablation = net::parse_ablation(j.at("ablation").get<std::string>());
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.split = j.value("split", std::string("train"));
  c.validate();
  return c;
}

namespace {

std::vector<std::string> draw(const std::vector<std::string>& pool, int count, Rng& rng,
                              bool& repeated) {
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(count));
  if (static_cast<int>(pool.size()) >= count) {
    std::vector<size_t> idx(pool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < count; ++i) {  // partial Fisher-Yates
      std::uniform_int_distribution<size_t> pick(static_cast<size_t>(i), idx.size() - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[pick(rng)]);
      out.push_back(pool[idx[static_cast<size_t>(i)]]);
    }
  } else {
    repeated = true;
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  }
  return out;
}

}  // namespace

PairBatch sample_pairs(const corpus::CorpusManifest& manifest, const std::string& split,
                       int batch, Rng& rng) {
  if (batch < 2 || batch % 2 != 0) throw InvalidArgument("batch size must be even and >= 2");
  std::vector<std::string> reals, fakes;
  for (const auto* r : manifest.split_records(split))
    (r->label == corpus::Label::real ? reals : fakes).push_back(r->sample_id);
  if (reals.empty() || fakes.empty())
    throw InvalidArgument("split '" + split + "' must contain both real and fake samples");
  PairBatch b;
  b.real_ids = draw(reals, batch / 2, rng, b.repeated);
  b.fake_ids = draw(fakes, batch / 2, rng, b.repeated);
  return b;
}

template <typename T>
Tensor<T> image_to_tensor(const synth::Image& img) {
  const int s = img.size;
  Tensor<T> t(Shape{3, s, s});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) t[(c * s + y) * s + x] = static_cast<T>(img.at(y, x, c));
  return t;
}

template <typename T>
synth::Image tensor_to_image(const Tensor<T>& t, int64_t index) {
  if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != t.dim(3))
    throw InvalidArgument("expected [B,3,S,S] images, got " + shape_str(t.shape()));
  const int s = static_cast<int>(t.dim(2));
  synth::Image img(s);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) img.at(y, x, c) = static_cast<float>(t.at(index, c, y, x));
  return img;
}

template <typename T>
const Tensor<T>& ImageCache<T>::image(const std::string& sample_id) {
  auto it = cache_.find(sample_id);
  if (it != cache_.end()) return it->second;
  const auto& rec = manifest_->record(sample_id);
  auto img = corpus::read_png(root_ / rec.image_path);
  if (img.size != manifest_->image_size)
    throw IoError("image " + rec.image_path + " has size " + std::to_string(img.size) +
                  ", manifest says " + std::to_string(manifest_->image_size));
  return cache_.emplace(sample_id, image_to_tensor<T>(img)).first->second;
}

template <typename T>
void ImageCache<T>::preload(const std::string& split) {
  for (const auto* r : manifest_->split_records(split)) image(r->sample_id);
}

template <typename T>
Var<T> ImageCache<T>::batch(const std::vector<std::string>& ids) {
  const int64_t s = manifest_->image_size, per = 3 * s * s;
  Tensor<T> out(Shape{static_cast<int64_t>(ids.size()), 3, s, s});
  for (size_t i = 0; i < ids.size(); ++i) {
    const auto& img = image(ids[i]);
    std::copy(img.data(), img.data() + per, out.data() + static_cast<int64_t>(i) * per);
  }
  return Var<T>::constant(std::move(out));
}

template <typename T>
PairForward<T> forward_pair(const net::Model<T>& model, const Var<T>& real, const Var<T>& fake,
                            uint64_t seed, int64_t step) {
  require_same_shape(real.shape(), fake.shape(), "forward_pair");
  const int64_t p = real.dim(0);
  const auto ablation = model.ablation();
  auto x = ag::concat<T>({real, fake}, 0);
  auto encoded = model.encode_identities(x);
  std::optional<net::Separated<T>> sep;
  if (net::has_separator(ablation)) sep = model.separate_artifacts(encoded.first, encoded.second);

  PairForward<T> f;
  const auto mode = iacc::NoiseMode::sample;
  const auto s = static_cast<uint64_t>(step);
  f.real = model.make_bundle(encoded, sep, 0, p, derive_seed(seed, "iacc", s, 0), mode);
  f.fake = model.make_bundle(encoded, sep, p, 2 * p, derive_seed(seed, "iacc", s, 1), mode);

  auto cls_in = ag::concat<T>({net::Model<T>::classifier_input(f.real),
                               net::Model<T>::classifier_input(f.fake)},
                              0);
  f.probs = model.classify(cls_in);
  std::vector<T> labels(static_cast<size_t>(2 * p), T(0));
  std::fill(labels.begin() + p, labels.end(), T(1));
  f.terms.bce = losses::bce_loss(f.probs, labels);
  if (!net::has_separator(ablation)) return f;

  // One decoder call for I^s_A, I^s_B, I^c_A = D(ID_A, ART_B), I^c_B = D(ID_B, ART_A).
  const auto& A = f.real;
  const auto& B = f.fake;
  auto dec = model.decode_face(ag::concat<T>({A.ID, B.ID, A.ID, B.ID}, 0),
                               ag::concat<T>({A.ART, B.ART, B.ART, A.ART}, 0));
  f.self_real = ag::slice(dec, 0, 0, p);
  f.self_fake = ag::slice(dec, 0, p, 2 * p);
  f.cross_real = ag::slice(dec, 0, 2 * p, 3 * p);
  f.cross_fake = ag::slice(dec, 0, 3 * p, 4 * p);
  std::tie(f.terms.rec_self, f.terms.rec_cross) = losses::reconstruction_loss<T>(
      {real, fake}, {f.self_real, f.self_fake}, {f.cross_real, f.cross_fake});

  if (net::has_iacc(ablation)) {
    auto ir = iacc::info_loss(A), iff = iacc::info_loss(B);
    f.terms.info = ag::scale(ir.total + iff.total, T(0.5));
  }
  if (net::has_contrastive(ablation))
    std::tie(f.terms.con_real, f.terms.con_fake) = losses::separation_contrastive_loss(A, B);
  return f;
}

template <typename T>
losses::LossBreakdown train_step(TrainState<T>& state, const Var<T>& real, const Var<T>& fake) {
  auto f = forward_pair(state.model, real, fake, state.config.seed, state.step);
  auto breakdown = losses::breakdown_of(f.terms, state.config.weights, static_cast<long>(state.step));
  auto total = losses::weighted_total(f.terms, state.config.weights);
  state.model.params().zero_grad();
  total.backward();
  state.opt.step(state.model.params());
  ++state.step;
  state.history.push_back(breakdown);
  return breakdown;
}

template <typename T>
losses::LossBreakdown train_step(TrainState<T>& state, const corpus::CorpusManifest& manifest,
                                 ImageCache<T>& images) {
  Rng rng(derive_seed(state.config.seed, "pairs", static_cast<uint64_t>(state.step)));
  auto pairs = sample_pairs(manifest, state.config.split, state.config.batch_size, rng);
  if (pairs.repeated && state.step == 0)
    std::cerr << "warning: split '" << state.config.split
              << "' is smaller than half a batch; samples repeat within batches\n";
  return train_step(state, images.batch(pairs.real_ids), images.batch(pairs.fake_ids));
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[] = "DFCKPT1\n";
constexpr size_t kMagicLen = 8;

uint64_t fnv1a(const char* p, size_t n) {
  uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename V>
void put(std::string& buf, V v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

class Reader {
 public:
  Reader(const std::string& buf, size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}
  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const char* take(size_t n) {
    if (n > end_ - pos_) throw IoError("checkpoint truncated: " + path_);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& buf_;
  size_t end_;
  size_t pos_ = kMagicLen;
  std::string path_;
};

template <typename T>
void put_tensor(std::string& buf, const std::string& name, const Tensor<T>& t) {
  put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
  buf += name;
  put<uint32_t>(buf, static_cast<uint32_t>(t.rank()));
  for (auto d : t.shape()) put<int64_t>(buf, d);
  buf.append(reinterpret_cast<const char*>(t.data()), sizeof(T) * static_cast<size_t>(t.numel()));
}

template <typename T, typename Stored>
Tensor<T> get_tensor_as(Reader& r, Shape shape) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  std::vector<Stored> raw(n);
  std::memcpy(raw.data(), r.take(n * sizeof(Stored)), n * sizeof(Stored));
  return Tensor<T>(std::move(shape), std::vector<T>(raw.begin(), raw.end()));
}

template <typename T>
constexpr const char* dtype_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

std::string checkpoint_name(int64_t step) { return "ckpt-" + std::to_string(step); }

template <typename T>
void save_checkpoint(const TrainState<T>& state, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json hist = json::array();
  for (const auto& b : state.history) hist.push_back(b.to_json());
  json header{{"dtype", dtype_tag<T>()},
              {"model", state.model.config().to_json()},
              {"train", state.config.to_json()},
              {"step", state.step},
              {"adam_t", state.opt.t()},
              {"history", hist}};
  std::string buf(kMagic, kMagicLen);
  const auto h = header.dump();
  put<uint64_t>(buf, h.size());
  buf += h;
  uint32_t count = 0;
  std::string body;
  for (const auto& [name, p] : state.model.params().entries()) {
    put_tensor(body, "param/" + name, p.value());
    ++count;
  }
  for (const auto& [name, m] : state.opt.m()) {
    put_tensor(body, "adam_m/" + name, m);
    ++count;
  }
  for (const auto& [name, v] : state.opt.v()) {
    put_tensor(body, "adam_v/" + name, v);
    ++count;
  }
  put<uint32_t>(buf, count);
  buf += body;
  put<uint64_t>(buf, fnv1a(buf.data(), buf.size()));

  const auto tmp = dir / "state.bin.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, dir / "state.bin", ec);
  if (ec) throw IoError("cannot finalize checkpoint " + dir.string() + ": " + ec.message());
  json sidecar{{"model", state.model.config().to_json()},
               {"ablation", std::string(net::ablation_name(state.config.ablation))},
               {"step", state.step},
               {"dtype", dtype_tag<T>()}};
  std::ofstream(dir / "model.json") << sidecar.dump(2) << "\n";
}

template <typename T>
TrainState<T> load_checkpoint(const fs::path& dir, std::optional<net::Ablation> expected) {
  const auto file = dir / "state.bin";
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + file.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kMagicLen + 8 || buf.compare(0, kMagicLen, kMagic) != 0)
    throw IoError("not a checkpoint (bad magic): " + file.string());
  const size_t end = buf.size() - 8;
  uint64_t stored;
  std::memcpy(&stored, buf.data() + end, 8);
  if (stored != fnv1a(buf.data(), end))
    throw IoError("checkpoint checksum mismatch (corrupt file): " + file.string());

  Reader r(buf, end, file.string());
  const auto hlen = r.get<uint64_t>();
  json header;
  try {
    header = json::parse(std::string(r.take(static_cast<size_t>(hlen)), static_cast<size_t>(hlen)));
  } catch (const json::exception& e) {
    throw IoError("checkpoint header unreadable: " + std::string(e.what()));
  }
  auto mc = net::ModelConfig::from_json(header.at("model"));
  auto tc = TrainConfig::from_json(header.at("train"));
  if (expected && *expected != tc.ablation)
    throw InvalidArgument("checkpoint " + dir.string() + " holds the " +
                          std::string(net::ablation_name(tc.ablation)) +
                          " ablation, expected " + std::string(net::ablation_name(*expected)));
  const bool f32 = header.at("dtype").get<std::string>() == "f32";

  TrainState<T> state(mc, tc);
  state.step = header.at("step").get<int64_t>();
  state.opt.set_t(header.at("adam_t").get<int64_t>());
  for (const auto& b : header.at("history")) state.history.push_back(losses::LossBreakdown::from_json(b));

  const auto count = r.get<uint32_t>();
  size_t params_seen = 0;
  for (uint32_t i = 0; i < count; ++i) {
    const auto nlen = r.get<uint32_t>();
    std::string name(r.take(nlen), nlen);
    const auto rank = r.get<uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<int64_t>();
    auto t = f32 ? get_tensor_as<T, float>(r, shape) : get_tensor_as<T, double>(r, shape);
    const auto slash = name.find('/');
    const auto kind = name.substr(0, slash), key = name.substr(slash + 1);
    if (kind == "param") {
      if (!state.model.params().contains(key))
        throw IoError("checkpoint parameter " + key + " does not belong to the model");
      auto& p = state.model.params().get(key);
      if (p.shape() != t.shape())
        throw IoError("checkpoint parameter " + key + " has shape " + shape_str(t.shape()) +
                      ", model expects " + shape_str(p.shape()));
      p.mutable_value() = std::move(t);
      ++params_seen;
    } else if (kind == "adam_m") {
      state.opt.m()[key] = std::move(t);
    } else if (kind == "adam_v") {
      state.opt.v()[key] = std::move(t);
    } else {
      throw IoError("checkpoint entry of unknown kind: " + name);
    }
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint " + file.string());
  if (params_seen != state.model.params().entries().size())
    throw IoError("checkpoint " + file.string() + " is missing parameters");
  return state;
}

template <typename T>
RunResult run_training(const net::ModelConfig& model_config, const TrainConfig& config,
                       const fs::path& data_root, const fs::path& out,
                       const json& resolved_config, const std::optional<fs::path>& resume,
                       const ProgressFn& progress) {
  config.validate();
  model_config.validate();
  auto manifest = corpus::load_manifest(data_root);
  if (manifest.image_size != model_config.image_size)
    throw InvalidArgument("model.image_size " + std::to_string(model_config.image_size) +
                          " does not match corpus image size " +
                          std::to_string(manifest.image_size));
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  std::ofstream(out / "config.json") << resolved_config.dump(2) << "\n";

  std::optional<TrainState<T>> state;
  if (resume) {
    state.emplace(load_checkpoint<T>(*resume, config.ablation));
    state->config.steps = config.steps;
    state->config.checkpoint_every = config.checkpoint_every;
  } else {
    state.emplace(model_config, config);
  }
  std::ofstream log(out / "log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out / "log.jsonl").string());

  ImageCache<T> images(data_root, manifest);
  images.preload(config.split);
  RunResult result;
  const auto every = state->config.checkpoint_every;
  while (state->step < state->config.steps) {
    auto b = train_step(*state, manifest, images);
    auto line = b.to_json();
    line["step"] = state->step - 1;
    log << line.dump() << "\n";
    if (every > 0 && state->step % every == 0 && state->step < state->config.steps)
      save_checkpoint(*state, out / checkpoint_name(state->step));
    if (progress) progress(state->step, b);
  }
  log.flush();
  result.final_checkpoint = out / checkpoint_name(state->step);
  save_checkpoint(*state, result.final_checkpoint);
  result.history = state->history;
  return result;
}

#define DFORGE_TRAIN(T)                                                                        \
  template Tensor<T> image_to_tensor<T>(const synth::Image&);                                  \
  template synth::Image tensor_to_image(const Tensor<T>&, int64_t);                            \
  template class ImageCache<T>;                                                                \
  template PairForward<T> forward_pair(const net::Model<T>&, const Var<T>&, const Var<T>&,     \
                                       uint64_t, int64_t);                                     \
  template losses::LossBreakdown train_step(TrainState<T>&, const Var<T>&, const Var<T>&);     \
  template losses::LossBreakdown train_step(TrainState<T>&, const corpus::CorpusManifest&,     \
                                            ImageCache<T>&);                                   \
  template void save_checkpoint(const TrainState<T>&, const fs::path&);                        \
  template TrainState<T> load_checkpoint(const fs::path&, std::optional<net::Ablation>);       \
  template RunResult run_training<T>(const net::ModelConfig&, const TrainConfig&,              \
                                     const fs::path&, const fs::path&, const json&,            \
                                     const std::optional<fs::path>&, const ProgressFn&);
DFORGE_TRAIN(float)
DFORGE_TRAIN(double)
#undef DFORGE_TRAIN

}  // namespace dforge::train
