#pragma once

#include <filesystem>
#include <array>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/trainer.hpp"

namespace dforge::eval {

// Mann-Whitney AUC; ties count one half. labels are 0/1.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// AUC over per-group mean scores. Every group must carry a single label.
double video_auc(const std::vector<double>& frame_scores, const std::vector<std::string>& group_ids,
                 const std::vector<int>& labels);

struct SplitReport {
  double frame_auc = 0;
  double video_auc = 0;
  int64_t n_frames = 0;
  int64_t n_groups = 0;
};

struct EvalReport {
  std::map<std::string, SplitReport> splits;
  std::string ablation;
  uint64_t seed = 0;
  std::string checkpoint;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Deterministic per-image inference: each image is its own set for the gate
// statistics, and the mixing noise is replaced by its mean.
template <typename T>
net::DisentangledBundle<T> infer(const net::Model<T>& model, const Var<T>& image);

template <typename T>
std::vector<double> score_split(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                                train::ImageCache<T>& images, const std::string& split);

template <typename T>
EvalReport evaluate(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                    train::ImageCache<T>& images, const std::vector<std::string>& splits);

// Loads the checkpoint and corpus from disk; never writes to either.
template <typename T>
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root,
                    const std::vector<std::string>& splits);

// ---- embeddings ------------------------------------------------------------

// "id_pure[1]", "id_pure[2]", "art_pure[1]", "art_pure[2]", "id_raw[1]", "id_raw[2]".
const std::vector<std::string>& feature_kinds();
void check_kind(const std::string& kind);

struct EmbeddingRow {
  std::string sample_id;
  int label = 0;
  std::string method;
  std::string kind;
  std::vector<double> values;
};

template <typename T>
std::vector<EmbeddingRow> collect_embeddings(const net::Model<T>& model,
                                             const corpus::CorpusManifest& manifest,
                                             train::ImageCache<T>& images,
                                             const std::string& split,
                                             const std::vector<std::string>& kinds,
                                             int max_samples = 0);

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows);
std::vector<EmbeddingRow> read_embeddings_csv(const std::filesystem::path& path);

template <typename T>
std::vector<EmbeddingRow> export_embeddings(const std::filesystem::path& checkpoint,
                                            const std::filesystem::path& data_root,
                                            const std::string& split,
                                            const std::vector<std::string>& kinds,
                                            const std::filesystem::path& out_csv,
                                            int max_samples = 0);

// Mean silhouette coefficient (Euclidean) of a labelled point set.
double silhouette(const std::vector<std::vector<double>>& points, const std::vector<int>& cluster);

// Silhouette of {id_pure[1], id_pure[2]} rows against {art_pure[1], art_pure[2]} rows.
double identity_artifact_silhouette(const std::vector<EmbeddingRow>& rows);

// ---- ablation matrix ---------------------------------------------------------

struct AblationRun {
  net::Ablation ablation = net::Ablation::full;
  uint64_t seed = 0;
  EvalReport report;
  std::vector<losses::LossBreakdown> history;
  std::filesystem::path checkpoint;
};

struct AblationRow {
  std::string ablation;
  double in_mean = 0, in_std = 0, cross_mean = 0, cross_std = 0;
  int seeds = 0;
};

struct AblationTable {
  std::vector<AblationRun> runs;

  std::vector<AblationRow> rows() const;
  AblationRow row(net::Ablation a) const;
  void write_csv(const std::filesystem::path& path) const;
};

// Trains every ablation for every seed under out/<tag>-seed<k>/ and
// evaluates test_in and test_cross. Completed runs found on disk are reused.
template <typename T>
AblationTable run_ablation_matrix(const std::filesystem::path& data_root,
                                  const std::vector<uint64_t>& seeds, int steps,
                                  const net::ModelConfig& model_config,
                                  const train::TrainConfig& base, const std::filesystem::path& out,
                                  const train::ProgressFn& progress = {});

// ---- plots ---------------------------------------------------------------------

struct TsneOptions {
  double perplexity = 30;
  int iterations = 1000;
  uint64_t seed = 0;
};

// Exact t-SNE to two dimensions.
std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points,
                                        const TsneOptions& options = {});

void write_scatter_svg(const std::filesystem::path& path,
                       const std::vector<std::array<double, 2>>& xy,
                       const std::vector<std::string>& series, const std::string& title);

// Rows: real, fake, self(real), self(fake), cross(real), cross(fake).
template <typename T>
void write_reconstruction_grid(const net::Model<T>& model, const corpus::CorpusManifest& manifest,
                               train::ImageCache<T>& images, const std::string& split, int pairs,
                               const std::filesystem::path& out_png);

}  // namespace dforge::eval
