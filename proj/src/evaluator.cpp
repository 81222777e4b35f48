#include "dforge/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dforge::eval {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InvalidArgument("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                          std::to_string(labels.size()) + " labels");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;  // sum of 1-based average ranks of positives
  size_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    i = j;
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("roc_auc: labels must be 0 or 1");
    n_pos += static_cast<size_t>(l);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidArgument("roc_auc needs both labels present");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

double video_auc(const std::vector<double>& frame_scores, const std::vector<std::string>& group_ids,
                 const std::vector<int>& labels) {
  if (frame_scores.size() != group_ids.size() || frame_scores.size() != labels.size())
    throw InvalidArgument("video_auc: scores, group ids and labels differ in length");
  struct Acc {
    double sum = 0;
    int count = 0;
    int label = 0;
  };
  std::map<std::string, Acc> groups;
  for (size_t i = 0; i < frame_scores.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(group_ids[i]);
    if (!fresh && it->second.label != labels[i])
      throw InvalidArgument("group " + group_ids[i] + " mixes real and fake frames");
    it->second.label = labels[i];
    it->second.sum += frame_scores[i];
    ++it->second.count;
  }
  std::vector<double> means;
  std::vector<int> glabels;
  for (const auto& [id, a] : groups) {
    means.push_back(a.sum / a.count);
    glabels.push_back(a.label);
  }
  return roc_auc(means, glabels);
}

json EvalReport::to_json() const {
  json s = json::object();
  for (const auto& [name, r] : splits)
    s[name] = {{"frame_auc", r.frame_auc},
               {"video_auc", r.video_auc},
               {"n_frames", r.n_frames},
               {"n_groups", r.n_groups}};
  return {{"splits", s}, {"ablation", ablation}, {"seed", seed}, {"checkpoint", checkpoint}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  for (const auto& [name, v] : j.at("splits").items())
    r.splits[name] = {v.at("frame_auc").get<double>(), v.at("video_auc").get<double>(),
                      v.at("n_frames").get<int64_t>(), v.at("n_groups").get<int64_t>()};
  r.ablation = j.at("ablation").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

template <typename T>
net::DisentangledBundle<T> infer(const net::Model<T>& model, const Var<T>& image) {
  return model.disentangle(image, 0, iacc::NoiseMode::mean);
}

template <typename T>
std::vector<double> score_split(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                                train::ImageCache<T>& images, const std::string& split) {
  NoGradGuard no_grad;
  std::vector<double> scores;
  for (const auto* r : manifest.split_records(split)) {
    auto b = infer(model, images.batch({r->sample_id}));
    scores.push_back(static_cast<double>(model.classify(net::Model<T>::classifier_input(b)).item()));
  }
  return scores;
}

template <typename T>
EvalReport evaluate(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                    train::ImageCache<T>& images, const std::vector<std::string>& splits) {
  if (model.config().image_size != manifest.image_size)
    throw InvalidArgument("model image size " + std::to_string(model.config().image_size) +
                          " does not match corpus image size " +
                          std::to_string(manifest.image_size));
  EvalReport report;
  report.ablation = std::string(net::ablation_name(model.ablation()));
  report.seed = model.config().seed;
  for (const auto& split : splits) {
    auto recs = manifest.split_records(split);
    if (recs.empty()) throw InvalidArgument("split '" + split + "' is empty or unknown");
    auto scores = score_split(model, manifest, images, split);
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (const auto* r : recs) {
      labels.push_back(r->label == corpus::Label::fake ? 1 : 0);
      groups.push_back(r->group_id);
    }
    SplitReport sr;
    sr.frame_auc = roc_auc(scores, labels);
    sr.video_auc = video_auc(scores, groups, labels);
    sr.n_frames = static_cast<int64_t>(recs.size());
    sr.n_groups = static_cast<int64_t>(std::set<std::string>(groups.begin(), groups.end()).size());
    report.splits[split] = sr;
  }
  return report;
}

template <typename T>
EvalReport evaluate(const fs::path& checkpoint, const fs::path& data_root,
                    const std::vector<std::string>& splits) {
  auto state = train::load_checkpoint<T>(checkpoint);
  auto manifest = corpus::load_manifest(data_root);
  train::ImageCache<T> images(data_root, manifest);
  auto report = evaluate(state.model, manifest, images, splits);
  report.seed = state.config.seed;
  report.checkpoint = checkpoint.filename().string();
  if (report.checkpoint.empty()) report.checkpoint = checkpoint.parent_path().filename().string();
  return report;
}

// ---- embeddings ------------------------------------------------------------

const std::vector<std::string>& feature_kinds() {
  static const std::vector<std::string> kinds{"id_pure[1]",  "id_pure[2]", "art_pure[1]",
                                              "art_pure[2]", "id_raw[1]",  "id_raw[2]"};
  return kinds;
}

void check_kind(const std::string& kind) {
  const auto& k = feature_kinds();
  if (std::find(k.begin(), k.end(), kind) == k.end())
    throw InvalidArgument("unknown feature kind '" + kind +
                          "' (expected id_pure[1|2], art_pure[1|2] or id_raw[1|2])");
}

namespace {

template <typename T>
const Var<T>& pick(const net::DisentangledBundle<T>& b, const std::string& kind) {
  const int n = kind[kind.size() - 2] - '1';
  if (kind.rfind("id_pure", 0) == 0) return b.id_pure[n];
  if (kind.rfind("art_pure", 0) == 0) return b.art_pure[n];
  return b.id_raw[n];
}

}  // namespace

template <typename T>
std::vector<EmbeddingRow> collect_embeddings(const net::Model<T>& model,
                                             const corpus::CorpusManifest& manifest,
                                             train::ImageCache<T>& images, const std::string& split,
                                             const std::vector<std::string>& kinds,
                                             int max_samples) {
  for (const auto& k : kinds) check_kind(k);
  if (!net::has_separator(model.ablation()))
    throw InvalidArgument("the efn ablation has no separated features to export");
  NoGradGuard no_grad;
  std::vector<EmbeddingRow> rows;
  int taken = 0;
  for (const auto* r : manifest.split_records(split)) {
    if (max_samples > 0 && taken++ >= max_samples) break;
    auto b = infer(model, images.batch({r->sample_id}));
    for (const auto& k : kinds) {
      auto pooled = ag::global_avg_pool(pick(b, k));
      EmbeddingRow row{r->sample_id, r->label == corpus::Label::fake ? 1 : 0,
                       std::string(synth::method_name(r->method)), k, {}};
      for (auto v : pooled.value().vec()) row.values.push_back(static_cast<double>(v));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_embeddings_csv(const fs::path& path, const std::vector<EmbeddingRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const size_t width = rows.empty() ? 0 : rows.front().values.size();
  out << "sample_id,label,method,kind";
  for (size_t i = 0; i < width; ++i) out << ",v" << i;
  out << "\n" << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.label << ',' << r.method << ',' << r.kind;
    for (double v : r.values) out << ',' << v;
    out << "\n";
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<EmbeddingRow> read_embeddings_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,label,method,kind", 0) != 0)
    throw IoError("not an embedding dump (bad header): " + path.string());
  const auto width = static_cast<size_t>(std::count(line.begin(), line.end(), ',') - 3);
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != width + 4) throw IoError("malformed embedding row in " + path.string());
    EmbeddingRow r{cells[0], std::stoi(cells[1]), cells[2], cells[3], {}};
    for (size_t i = 4; i < cells.size(); ++i) r.values.push_back(std::stod(cells[i]));
    rows.push_back(std::move(r));
  }
  return rows;
}

template <typename T>
std::vector<EmbeddingRow> export_embeddings(const fs::path& checkpoint, const fs::path& data_root,
                                            const std::string& split,
                                            const std::vector<std::string>& kinds,
                                            const fs::path& out_csv, int max_samples) {
  for (const auto& k : kinds) check_kind(k);
  auto state = train::load_checkpoint<T>(checkpoint);
  auto manifest = corpus::load_manifest(data_root);
  train::ImageCache<T> images(data_root, manifest);
  auto rows = collect_embeddings(state.model, manifest, images, split, kinds, max_samples);
  write_embeddings_csv(out_csv, rows);
  return rows;
}

double silhouette(const std::vector<std::vector<double>>& points, const std::vector<int>& cluster) {
  const size_t n = points.size();
  if (cluster.size() != n) throw InvalidArgument("silhouette: labels and points differ in count");
  std::map<int, size_t> sizes;
  for (int c : cluster) ++sizes[c];
  if (sizes.size() < 2) throw InvalidArgument("silhouette needs at least two clusters");
  std::vector<double> dist(n * n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (size_t k = 0; k < points[i].size(); ++k) {
        const double d = points[i][k] - points[j][k];
        s += d * d;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
    }
  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (size_t j = 0; j < n; ++j)
      if (j != i) sum[cluster[j]] += dist[i * n + j];
    const size_t own = sizes[cluster[i]];
    if (own < 2) continue;  // singleton clusters score 0
    const double a = sum[cluster[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [c, sz] : sizes)
      if (c != cluster[i]) b = std::min(b, sum[c] / static_cast<double>(sz));
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

double identity_artifact_silhouette(const std::vector<EmbeddingRow>& rows) {
  std::vector<std::vector<double>> pts;
  std::vector<int> cl;
  for (const auto& r : rows) {
    if (r.kind.rfind("id_pure", 0) == 0) cl.push_back(0);
    else if (r.kind.rfind("art_pure", 0) == 0) cl.push_back(1);
    else continue;
    pts.push_back(r.values);
  }
  return silhouette(pts, cl);
}

// ---- ablation matrix ---------------------------------------------------------

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

constexpr net::Ablation kLadder[] = {net::Ablation::efn, net::Ablation::pd, net::Ablation::pd_iacc,
                                     net::Ablation::full};

}  // namespace

std::vector<AblationRow> AblationTable::rows() const {
  std::vector<AblationRow> out;
  for (auto a : kLadder) {
    std::vector<double> in, cross;
    for (const auto& r : runs) {
      if (r.ablation != a) continue;
      in.push_back(r.report.splits.at("test_in").frame_auc);
      cross.push_back(r.report.splits.at("test_cross").frame_auc);
    }
    if (in.empty()) continue;
    AblationRow row;
    row.ablation = std::string(net::ablation_name(a));
    std::tie(row.in_mean, row.in_std) = mean_std(in);
    std::tie(row.cross_mean, row.cross_std) = mean_std(cross);
    row.seeds = static_cast<int>(in.size());
    out.push_back(row);
  }
  return out;
}

AblationRow AblationTable::row(net::Ablation a) const {
  for (auto& r : rows())
    if (r.ablation == net::ablation_name(a)) return r;
  throw InvalidArgument("ablation table has no " + std::string(net::ablation_name(a)) + " row");
}

void AblationTable::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ablation,seeds,test_in_mean,test_in_std,test_cross_mean,test_cross_std\n"
      << std::setprecision(6) << std::fixed;
  for (const auto& r : rows())
    out << r.ablation << ',' << r.seeds << ',' << r.in_mean << ',' << r.in_std << ','
        << r.cross_mean << ',' << r.cross_std << "\n";
}

template <typename T>
AblationTable run_ablation_matrix(const fs::path& data_root, const std::vector<uint64_t>& seeds,
                                  int steps, const net::ModelConfig& model_config,
                                  const train::TrainConfig& base, const fs::path& out,
                                  const train::ProgressFn& progress) {
  if (seeds.size() < 2) throw InvalidArgument("the ablation matrix needs at least two seeds");
  auto manifest = corpus::load_manifest(data_root);
  train::ImageCache<T> images(data_root, manifest);
  AblationTable table;
  for (auto a : kLadder)
    for (auto seed : seeds) {
      AblationRun run;
      run.ablation = a;
      run.seed = seed;
      const auto dir = out / (std::string(net::ablation_name(a)) + "-seed" + std::to_string(seed));
      run.checkpoint = dir / train::checkpoint_name(steps);
      const auto report_path = dir / "report.json";
      if (fs::exists(run.checkpoint / "state.bin") && fs::exists(report_path)) {
        std::ifstream in(report_path);
        run.report = EvalReport::from_json(json::parse(in));
        run.history = train::load_checkpoint<T>(run.checkpoint, a).history;
      } else {
        auto mc = model_config;
        mc.seed = seed;
        auto tc = base;
        tc.ablation = a;
        tc.seed = seed;
        tc.steps = steps;
        json resolved{{"model", mc.to_json()}, {"train", tc.to_json()},
                      {"data", data_root.string()}};
        auto result = train::run_training<T>(mc, tc, data_root, dir, resolved, std::nullopt, progress);
        auto state = train::load_checkpoint<T>(result.final_checkpoint, a);
        run.report = evaluate(state.model, manifest, images, {"test_in", "test_cross"});
        run.report.checkpoint = result.final_checkpoint.filename().string();
        run.history = std::move(result.history);
        std::ofstream(report_path) << run.report.to_json().dump(2) << "\n";
      }
      table.runs.push_back(std::move(run));
    }
  return table;
}

// ---- plots ---------------------------------------------------------------------

std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& x,
                                        const TsneOptions& opt) {
  const size_t n = x.size();
  if (n < 4) throw InvalidArgument("t-SNE needs at least 4 points");
  const double perplexity = std::min(opt.perplexity, static_cast<double>(n - 1) / 3.0);
  std::vector<double> d2(n * n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
      d2[i * n + j] = d2[j * n + i] = s;
    }
  // Conditional affinities at the requested perplexity (bisection on beta).
  std::vector<double> p(n * n, 0.0);
  const double target = std::log(perplexity);
  for (size_t i = 0; i < n; ++i) {
    double beta = 1, lo = 0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double sum = 0, hsum = 0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double v = std::exp(-beta * d2[i * n + j]);
        p[i * n + j] = v;
        sum += v;
        hsum += beta * d2[i * n + j] * v;
      }
      sum = std::max(sum, 1e-300);
      const double h = std::log(sum) + hsum / sum;
      for (size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
      if (std::abs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = p[j * n + i] = v;
    }

  Rng rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1e-2);
  std::vector<std::array<double, 2>> y(n), vel(n, {0, 0}), gains(n, {1, 1});
  for (auto& pt : y) pt = {normal(rng), normal(rng)};
  std::vector<double> q(n * n);
  for (int it = 0; it < opt.iterations; ++it) {
    const double exaggeration = it < 250 ? 12.0 : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double qsum = 0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = v;
        qsum += 2 * v;
      }
    for (size_t i = 0; i < n; ++i) {
      std::array<double, 2> g{0, 0};
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = q[i * n + j];
        const double f = (exaggeration * p[i * n + j] - w / qsum) * w;
        g[0] += 4 * f * (y[i][0] - y[j][0]);
        g[1] += 4 * f * (y[i][1] - y[j][1]);
      }
      for (int k = 0; k < 2; ++k) {
        gains[i][k] = (g[k] > 0) != (vel[i][k] > 0) ? gains[i][k] + 0.2 : std::max(gains[i][k] * 0.8, 0.01);
        vel[i][k] = momentum * vel[i][k] - 200.0 * gains[i][k] * g[k];
      }
    }
    std::array<double, 2> mean{0, 0};
    for (size_t i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) {
        y[i][k] += vel[i][k];
        mean[k] += y[i][k] / static_cast<double>(n);
      }
    for (auto& pt : y) pt = {pt[0] - mean[0], pt[1] - mean[1]};
  }
  return y;
}

void write_scatter_svg(const fs::path& path, const std::vector<std::array<double, 2>>& xy,
                       const std::vector<std::string>& series, const std::string& title) {
  if (xy.size() != series.size()) throw InvalidArgument("scatter: points and series differ in count");
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::vector<std::string> names;
  for (const auto& s : series)
    if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(s);
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& p : xy) {
    x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
  }
  const double w = 640, h = 640, m = 40;
  auto sx = [&](double v) { return m + (v - x0) / std::max(x1 - x0, 1e-12) * (w - 2 * m); };
  auto sy = [&](double v) { return h - m - (v - y0) / std::max(y1 - y0, 1e-12) * (h - 2 * m); };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + 20 * names.size()
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << m << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";
  for (size_t i = 0; i < xy.size(); ++i) {
    const auto k = std::find(names.begin(), names.end(), series[i]) - names.begin();
    out << "<circle cx=\"" << sx(xy[i][0]) << "\" cy=\"" << sy(xy[i][1]) << "\" r=\"3\" fill=\""
        << palette[k % 6] << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (size_t k = 0; k < names.size(); ++k)
    out << "<text x=\"" << m << "\" y=\"" << h + 14 + 20 * k << "\" font-family=\"sans-serif\" "
        << "font-size=\"13\" fill=\"" << palette[k % 6] << "\">" << names[k] << "</text>\n";
  out << "</svg>\n";
  if (!out) throw IoError("short write to " + path.string());
}

template <typename T>
void write_reconstruction_grid(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                               train::ImageCache<T>& images, const std::string& split, int pairs,
                               const fs::path& out_png) {
  if (!net::has_separator(model.ablation()))
    throw InvalidArgument("the efn ablation has no decoder");
  std::vector<std::string> reals, fakes;
  for (const auto* r : manifest.split_records(split)) {
    auto& dst = r->label == corpus::Label::real ? reals : fakes;
    if (static_cast<int>(dst.size()) < pairs) dst.push_back(r->sample_id);
  }
  const int p = static_cast<int>(std::min(reals.size(), fakes.size()));
  if (p == 0) throw InvalidArgument("split '" + split + "' lacks real/fake pairs");
  NoGradGuard no_grad;
  const int s = manifest.image_size;
  cv::Mat grid(6 * s, p * s, CV_8UC3, cv::Scalar(0, 0, 0));
  auto paste = [&](const Tensor<T>& img, int row, int col) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        auto& px = grid.at<cv::Vec3b>(row * s + y, col * s + x);
        for (int c = 0; c < 3; ++c)
          px[2 - c] = static_cast<uint8_t>(
              std::lround(std::clamp(static_cast<double>(img.at(0, c, y, x)), 0.0, 1.0) * 255.0));
      }
  };
  for (int i = 0; i < p; ++i) {
    auto ra = images.batch({reals[static_cast<size_t>(i)]});
    auto fb = images.batch({fakes[static_cast<size_t>(i)]});
    auto A = infer(model, ra), B = infer(model, fb);
    paste(ra.value(), 0, i);
    paste(fb.value(), 1, i);
    paste(model.decode_face(A.ID, A.ART).value(), 2, i);
    paste(model.decode_face(B.ID, B.ART).value(), 3, i);
    paste(model.decode_face(A.ID, B.ART).value(), 4, i);
    paste(model.decode_face(B.ID, A.ART).value(), 5, i);
  }
  if (!cv::imwrite(out_png.string(), grid)) throw IoError("cannot write " + out_png.string());
}

#define DFORGE_EVAL(T)                                                                          \
  template net::DisentangledBundle<T> infer(const net::Model<T>&, const Var<T>&);               \
  template std::vector<double> score_split(const net::Model<T>&, const corpus::CorpusManifest&, \
                                           train::ImageCache<T>&, const std::string&);          \
  template EvalReport evaluate(const net::Model<T>&, const corpus::CorpusManifest&,             \
                               train::ImageCache<T>&, const std::vector<std::string>&);         \
  template EvalReport evaluate<T>(const fs::path&, const fs::path&,                             \
                                  const std::vector<std::string>&);                             \
  template std::vector<EmbeddingRow> collect_embeddings(                                        \
      const net::Model<T>&, const corpus::CorpusManifest&, train::ImageCache<T>&,               \
      const std::string&, const std::vector<std::string>&, int);                                \
  template std::vector<EmbeddingRow> export_embeddings<T>(                                      \
      const fs::path&, const fs::path&, const std::string&, const std::vector<std::string>&,    \
      const fs::path&, int);                                                                    \
  template AblationTable run_ablation_matrix<T>(const fs::path&, const std::vector<uint64_t>&,  \
                                                int, const net::ModelConfig&,                   \
                                                const train::TrainConfig&, const fs::path&,     \
                                                const train::ProgressFn&);                      \
  template void write_reconstruction_grid(const net::Model<T>&, const corpus::CorpusManifest&,  \
                                          train::ImageCache<T>&, const std::string&, int,       \
                                          const fs::path&);
DFORGE_EVAL(float)
DFORGE_EVAL(double)
#undef DFORGE_EVAL

}  // namespace dforge::eval
