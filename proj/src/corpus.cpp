#include "dforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dforge/error.hpp"
#include "dforge/rng.hpp"

namespace dforge::corpus {

namespace fs = std::filesystem;
using nlohmann::json;
using synth::ForgeryMethod;

std::string_view label_name(Label l) { return l == Label::real ? "real" : "fake"; }

namespace {

Label parse_label(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  throw InvalidArgument("unknown label '" + s + "'");
}

std::string group_name(std::string_view cell, char pool, int g) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-%c-g%03d", std::string(cell).c_str(), pool, g);
  return buf;
}

std::string frame_name(const std::string& group, int f) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "-f%02d", f);
  return group + buf;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (identities < 8)
    throw InvalidArgument("generator needs at least 8 identities, got " + std::to_string(identities));
  std::set<ForgeryMethod> uniq(methods.begin(), methods.end());
  if (uniq.count(ForgeryMethod::none))
    throw InvalidArgument("generator methods must be forgery methods, not 'none'");
  if (uniq.size() != methods.size()) throw InvalidArgument("generator methods contain duplicates");
  if (methods.size() < 2)
    throw InvalidArgument("generator needs at least 2 forgery methods, got " +
                          std::to_string(methods.size()));
  if (!uniq.count(holdout))
    throw InvalidArgument("holdout method '" + std::string(synth::method_name(holdout)) +
                          "' is not among the generator methods");
  if (frames_per_group < 4)
    throw InvalidArgument("frames_per_group must be >= 4, got " + std::to_string(frames_per_group));
  if (groups_per_cell < 2) throw InvalidArgument("groups_per_cell must be >= 2");
  if (image_size < synth::kMinImageSize) throw InvalidArgument("image_size must be >= 16");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  if (!(sensor_noise >= 0.0f)) throw InvalidArgument("sensor_noise must be >= 0");
}

json GeneratorConfig::to_json() const {
  json ms = json::array();
  for (auto m : methods) ms.push_back(std::string(synth::method_name(m)));
  return json{{"identities", identities},
              {"methods", ms},
              {"holdout", std::string(synth::method_name(holdout))},
              {"groups_per_cell", groups_per_cell},
              {"frames_per_group", frames_per_group},
              {"image_size", image_size},
              {"test_fraction", test_fraction},
              {"sensor_noise", sensor_noise},
              {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  c.identities = j.at("identities").get<int>();
  c.methods.clear();
  for (const auto& m : j.at("methods")) c.methods.push_back(synth::parse_method(m.get<std::string>()));
  c.holdout = synth::parse_method(j.at("holdout").get<std::string>());
  c.groups_per_cell = j.at("groups_per_cell").get<int>();
  c.frames_per_group = j.at("frames_per_group").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.test_fraction = j.at("test_fraction").get<double>();
  c.sensor_noise = j.at("sensor_noise").get<float>();
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

const ForgeryRecord& CorpusManifest::record(const std::string& sample_id) const {
  for (const auto& r : records)
    if (r.sample_id == sample_id) return r;
  throw InvalidArgument("unknown sample_id '" + sample_id + "'");
}

std::vector<const ForgeryRecord*> CorpusManifest::split_records(const std::string& split) const {
  auto it = splits.find(split);
  if (it == splits.end()) throw InvalidArgument("manifest has no split '" + split + "'");
  std::map<std::string, const ForgeryRecord*> index;
  for (const auto& r : records) index[r.sample_id] = &r;
  std::vector<const ForgeryRecord*> out;
  out.reserve(it->second.size());
  for (const auto& id : it->second) {
    auto r = index.find(id);
    if (r == index.end()) throw InvalidArgument("split '" + split + "' references unknown " + id);
    out.push_back(r->second);
  }
  return out;
}

CorpusManifest plan_corpus(const GeneratorConfig& config) {
  config.validate();
  CorpusManifest m;
  m.image_size = config.image_size;
  m.generator_seed = config.seed;
  m.generator = config.to_json();

  std::vector<synth::IdentitySpec> ids;
  for (int i = 0; i < config.identities; ++i)
    ids.push_back(synth::IdentitySpec::from_seed(derive_seed(config.seed, "identity", i)));
  const int half = config.identities / 2;
  const std::vector<synth::IdentitySpec> pool_a(ids.begin(), ids.begin() + half);
  const std::vector<synth::IdentitySpec> pool_b(ids.begin() + half, ids.end());

  struct Cell {
    char pool;
    ForgeryMethod method;
  };
  std::vector<Cell> cells{{'A', ForgeryMethod::none}};
  for (auto meth : config.methods)
    if (meth != config.holdout) cells.push_back({'A', meth});
  cells.push_back({'B', ForgeryMethod::none});
  cells.push_back({'B', config.holdout});

  const int g_total = config.groups_per_cell;
  const int n_test = std::clamp(static_cast<int>(std::lround(g_total * config.test_fraction)), 1,
                                g_total - 1);
  auto& train = m.splits["train"];
  auto& test_in = m.splits["test_in"];
  auto& test_cross = m.splits["test_cross"];

  for (size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& cell = cells[ci];
    const auto& pool = cell.pool == 'A' ? pool_a : pool_b;
    const auto psize = static_cast<uint64_t>(pool.size());
    const bool fake = cell.method != ForgeryMethod::none;
    const std::string_view cell_name = fake ? synth::method_name(cell.method) : "real";
    for (int g = 0; g < g_total; ++g) {
      Rng rng(derive_seed(config.seed, "group", ci, static_cast<uint64_t>(g)));
      const uint64_t t = rng() % psize;
      const std::string group = group_name(cell_name, cell.pool, g);
      auto& split = cell.pool == 'B' ? test_cross : (g >= g_total - n_test ? test_in : train);
      std::optional<synth::IdentitySpec> source;
      if (fake) source = pool[(t + 1 + rng() % (psize - 1)) % psize];
      for (int f = 0; f < config.frames_per_group; ++f) {
        ForgeryRecord r;
        r.sample_id = frame_name(group, f);
        r.label = fake ? Label::fake : Label::real;
        r.source_identity = source;
        r.target_identity = pool[t];
        r.method = cell.method;
        r.group_id = group;
        r.image_path = "images/" + r.sample_id + ".png";
        split.push_back(r.sample_id);
        m.records.push_back(std::move(r));
      }
    }
  }
  return m;
}

synth::Image render_record(const CorpusManifest& manifest, const ForgeryRecord& r) {
  const uint64_t seed = manifest.generator_seed;
  const auto pose = synth::Pose::jitter(derive_seed(seed, "frame", hash_tag(r.sample_id)));
  synth::Image img =
      r.label == Label::real
          ? synth::render_identity(r.target_identity, manifest.image_size, pose)
          : synth::forge(*r.source_identity, r.target_identity, r.method, manifest.image_size,
                         derive_seed(seed, "group-noise", hash_tag(r.group_id)), pose);
  const float sigma = manifest.generator.value("sensor_noise", 0.0f);
  if (sigma > 0.0f) synth::add_sensor_noise(img, derive_seed(seed, "sensor", hash_tag(r.sample_id)), sigma);
  return img;
}

CorpusManifest generate_corpus(const GeneratorConfig& config, const fs::path& root) {
  CorpusManifest m = plan_corpus(config);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw IoError("cannot create corpus directory " + (root / "images").string() + ": " + ec.message());

  std::string failure;
  const auto n = static_cast<int64_t>(m.records.size());
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    const auto& r = m.records[static_cast<size_t>(i)];
    try {
      write_png(root / r.image_path, render_record(m, r));
    } catch (const std::exception& e) {
#pragma omp critical
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw IoError(failure);
  save_manifest(m, root);
  return m;
}

json identity_to_json(const synth::IdentitySpec& s) {
  json pal = json::array();
  for (const auto& c : s.palette) pal.push_back({c[0], c[1], c[2]});
  return json{{"seed", s.seed}, {"palette", pal}, {"geometry", s.geometry},
              {"texture_freq", s.texture_freq}};
}

synth::IdentitySpec identity_from_json(const json& j) {
  synth::IdentitySpec s;
  s.seed = j.at("seed").get<uint64_t>();
  const auto& pal = j.at("palette");
  if (pal.size() != 3) throw InvalidArgument("identity palette needs 3 colours");
  for (size_t i = 0; i < 3; ++i)
    for (size_t c = 0; c < 3; ++c) s.palette[i][c] = pal.at(i).at(c).get<float>();
  s.geometry = j.at("geometry").get<std::vector<float>>();
  if (s.geometry.size() != synth::kGeometrySize)
    throw InvalidArgument("identity geometry needs " + std::to_string(synth::kGeometrySize) +
                          " entries");
  s.texture_freq = j.at("texture_freq").get<float>();
  return s;
}

json manifest_to_json(const CorpusManifest& m) {
  json recs = json::array();
  for (const auto& r : m.records) {
    recs.push_back(json{
        {"sample_id", r.sample_id},
        {"label", std::string(label_name(r.label))},
        {"source_identity", r.source_identity ? identity_to_json(*r.source_identity) : json()},
        {"target_identity", identity_to_json(r.target_identity)},
        {"method", std::string(synth::method_name(r.method))},
        {"group_id", r.group_id},
        {"image_path", r.image_path}});
  }
  return json{{"records", recs},
              {"image_size", m.image_size},
              {"splits", m.splits},
              {"generator_seed", m.generator_seed},
              {"generator", m.generator}};
}

CorpusManifest manifest_from_json(const json& j) {
  try {
    CorpusManifest m;
    m.image_size = j.at("image_size").get<int>();
    m.generator_seed = j.at("generator_seed").get<uint64_t>();
    m.generator = j.value("generator", json::object());
    m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& jr : j.at("records")) {
      ForgeryRecord r;
      r.sample_id = jr.at("sample_id").get<std::string>();
      r.label = parse_label(jr.at("label").get<std::string>());
      if (!jr.at("source_identity").is_null())
        r.source_identity = identity_from_json(jr.at("source_identity"));
      r.target_identity = identity_from_json(jr.at("target_identity"));
      r.method = synth::parse_method(jr.at("method").get<std::string>());
      r.group_id = jr.at("group_id").get<std::string>();
      r.image_path = jr.at("image_path").get<std::string>();
      m.records.push_back(std::move(r));
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

void save_manifest(const CorpusManifest& m, const fs::path& root) {
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << manifest_to_json(m).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + (root / "manifest.json").string());
}

CorpusManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

std::vector<std::string> validate_manifest(const CorpusManifest& m, const fs::path* root) {
  std::vector<std::string> problems;
  std::map<std::string, const ForgeryRecord*> index;
  std::map<std::string, std::pair<Label, ForgeryMethod>> groups;
  for (const auto& r : m.records) {
    if (!index.emplace(r.sample_id, &r).second) problems.push_back("duplicate sample " + r.sample_id);
    const bool is_real = r.label == Label::real;
    if (is_real != (r.method == ForgeryMethod::none) ||
        is_real != !r.source_identity.has_value())
      problems.push_back("label/method/source mismatch on " + r.sample_id);
    auto [it, inserted] = groups.emplace(r.group_id, std::make_pair(r.label, r.method));
    if (!inserted && (it->second.first != r.label || it->second.second != r.method))
      problems.push_back("group " + r.group_id + " mixes labels or methods");
    if (root && !fs::exists(*root / r.image_path))
      problems.push_back("missing image " + r.image_path);
  }
  std::set<std::string> seen;
  for (const auto& [name, ids] : m.splits) {
    bool has_real = false, has_fake = false;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) problems.push_back("sample " + id + " appears in two splits");
      auto it = index.find(id);
      if (it == index.end()) {
        problems.push_back("split " + name + " references unknown " + id);
        continue;
      }
      (it->second->label == Label::real ? has_real : has_fake) = true;
    }
    if (!has_real || !has_fake) problems.push_back("split " + name + " lacks one of the labels");
  }
  return problems;
}

void write_png(const fs::path& path, const synth::Image& img) {
  cv::Mat mat(img.size, img.size, CV_8UC3);
  for (int y = 0; y < img.size; ++y)
    for (int x = 0; x < img.size; ++x) {
      auto& px = mat.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c)  // OpenCV stores BGR
        px[2 - c] = static_cast<uint8_t>(std::lround(std::clamp(img.at(y, x, c), 0.0f, 1.0f) * 255.0f));
    }
  if (!cv::imwrite(path.string(), mat)) throw IoError("cannot write image " + path.string());
}

synth::Image read_png(const fs::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw IoError("cannot read image " + path.string());
  if (mat.rows != mat.cols) throw IoError("image is not square: " + path.string());
  synth::Image img(mat.rows);
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x) {
      const auto& px = mat.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(px[2 - c]) / 255.0f;
    }
  return img;
}

}  // namespace dforge::corpus
