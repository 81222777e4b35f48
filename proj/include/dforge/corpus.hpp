#pragma once

// Synthetic corpus generation, the on-disk manifest, and PNG I/O.
//
// Layout: <root>/images/<sample_id>.png (8-bit RGB) and <root>/manifest.json.
// Splits: train (seen methods, identity pool A), test_in (held-out groups of
// the same cells), test_cross (held-out method, identity pool B).

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/synth.hpp"

namespace dforge::corpus {

enum class Label { real = 0, fake = 1 };

std::string_view label_name(Label l);

struct ForgeryRecord {
  std::string sample_id;
  Label label = Label::real;
  std::optional<synth::IdentitySpec> source_identity;
  synth::IdentitySpec target_identity;
  synth::ForgeryMethod method = synth::ForgeryMethod::none;
  std::string group_id;
  std::string image_path;  // relative to the corpus root
};

struct GeneratorConfig {
  int identities = 8;
  std::vector<synth::ForgeryMethod> methods{synth::all_forgery_methods().begin(),
                                            synth::all_forgery_methods().end()};
  synth::ForgeryMethod holdout = synth::ForgeryMethod::warp_lowfreq;
  int groups_per_cell = 20;  // groups per (label/method, pool) cell
  int frames_per_group = 8;
  int image_size = 64;
  double test_fraction = 0.25;
  float sensor_noise = 0.01f;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

struct CorpusManifest {
  std::vector<ForgeryRecord> records;
  int image_size = 64;
  std::map<std::string, std::vector<std::string>> splits;
  uint64_t generator_seed = 0;
  nlohmann::json generator;  // echo of the generating config

  const ForgeryRecord& record(const std::string& sample_id) const;
  std::vector<const ForgeryRecord*> split_records(const std::string& split) const;
};

// Builds the manifest without touching the filesystem.
CorpusManifest plan_corpus(const GeneratorConfig& config);

// Renders one record's image (before 8-bit quantization).
synth::Image render_record(const CorpusManifest& manifest, const ForgeryRecord& record);

// Plans, renders (in parallel) and writes images + manifest.json under root.
CorpusManifest generate_corpus(const GeneratorConfig& config, const std::filesystem::path& root);

nlohmann::json manifest_to_json(const CorpusManifest& m);
CorpusManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const CorpusManifest& m, const std::filesystem::path& root);
CorpusManifest load_manifest(const std::filesystem::path& root);

// Checks record/split invariants; returns human-readable violations.
std::vector<std::string> validate_manifest(const CorpusManifest& m,
                                           const std::filesystem::path* root = nullptr);

nlohmann::json identity_to_json(const synth::IdentitySpec& s);
synth::IdentitySpec identity_from_json(const nlohmann::json& j);

void write_png(const std::filesystem::path& path, const synth::Image& img);
synth::Image read_png(const std::filesystem::path& path);

}  // namespace dforge::corpus
