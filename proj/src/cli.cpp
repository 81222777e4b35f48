#include "dforge/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "dforge/config.hpp"
#include "dforge/evaluator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dforge::cli {
namespace {

bool deterministic_mode() {
  const char* v = std::getenv("DISENTAFORGE_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

void log_event(json event) {
  event["time"] = std::chrono::duration<double>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  std::cerr << event.dump() << "\n";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Flags that override config keys; applied only when given on the command line.
class Overrides {
 public:
  template <typename V>
  void add(CLI::App* app, const std::string& flag, const std::string& section,
           const std::string& key, const std::string& help) {
    auto value = std::make_shared<V>();
    auto* opt = app->add_option(flag, *value, help);
    entries_.push_back([=](json& j) {
      if (opt->count() > 0) j[section][key] = *value;
    });
  }
  void add_common_train(CLI::App* app) {
    add<std::string>(app, "--ablation", "train", "ablation", "efn | pd | pd_iacc | full");
    add<uint64_t>(app, "--seed", "train", "seed", "run seed");
    add<int>(app, "--steps", "train", "steps", "optimizer steps");
    add<double>(app, "--lr", "train", "lr", "learning rate");
    add<int>(app, "--batch", "train", "batch_size", "images per step (even)");
    add<double>(app, "--lambda1", "train", "lambda1", "BCE weight");
    add<double>(app, "--lambda2", "train", "lambda2", "reconstruction weight");
    add<double>(app, "--lambda3", "train", "lambda3", "contrastive weight");
    add<double>(app, "--lambda4", "train", "lambda4", "information loss weight");
    add<int>(app, "--checkpoint-every", "train", "checkpoint_every", "steps between checkpoints");
    add<int>(app, "--image-size", "model", "image_size", "input side in pixels (must match the corpus)");
    add<int>(app, "--d", "model", "d", "feature channels");
    add<int>(app, "--encoder-depth", "model", "encoder_depth", "encoder conv layers");
    add<int>(app, "--decoder-depth", "model", "decoder_depth", "convs per decoder stage");
    add<int>(app, "--classifier-hidden", "model", "classifier_hidden", "classifier width");
    add<bool>(app, "--freeze-encoder", "model", "freeze_encoder", "keep encoder weights fixed");
  }
  json collect() const {
    json j = json::object();
    for (const auto& e : entries_) e(j);
    return j;
  }

 private:
  std::vector<std::function<void(json&)>> entries_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Args {
  std::string config_file, data, out, ckpt, resume, kinds, split = "test_in", seeds = "0,1,2",
                                                       splits = "test_in,test_cross", emb, runs;
  int max_samples = 0, pairs = 8;
  std::optional<fs::path> config() const {
    return config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file);
  }
};

template <typename T>
int cmd_train(const Args& a, const config::RunConfig& rc) {
  const fs::path out(a.out);
  auto resolved = rc.to_json();
  resolved["data"] = a.data;
  resolved["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  const auto total = rc.train.steps;
  auto result = train::run_training<T>(
      rc.model, rc.train, a.data, out, resolved,
      a.resume.empty() ? std::nullopt : std::optional<fs::path>(a.resume),
      [total](int64_t step, const losses::LossBreakdown& b) {
        if (step % 100 == 0 || step == total) {
          auto e = b.to_json();
          e["event"] = "train";
          e["step"] = step;
          log_event(e);
        }
      });
  log_event({{"event", "done"}, {"checkpoint", result.final_checkpoint.string()}});
  return 0;
}

template <typename T>
int cmd_eval(const Args& a) {
  auto report = eval::evaluate<T>(a.ckpt, a.data, split_list(a.splits));
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_json(out, report.to_json());
  log_event({{"event", "eval"}, {"report", report.to_json()}});
  return 0;
}

template <typename T>
int cmd_export(const Args& a) {
  auto kinds = split_list(a.kinds);
  if (kinds.empty()) throw config::UsageError("--kinds must list at least one feature kind");
  for (const auto& k : kinds) {
    try {
      eval::check_kind(k);
    } catch (const InvalidArgument& e) {
      throw config::UsageError(e.what());
    }
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  auto rows = eval::export_embeddings<T>(a.ckpt, a.data, a.split, kinds, out, a.max_samples);
  log_event({{"event", "export"}, {"rows", rows.size()}, {"out", out.string()}});
  return 0;
}

template <typename T>
int cmd_ablate(const Args& a, const config::RunConfig& rc) {
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) seeds.push_back(std::stoull(s));
  const fs::path out(a.out);
  const fs::path runs = a.runs.empty() ? fs::path(out.string() + ".runs") : fs::path(a.runs);
  ensure_dir(runs);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  auto resolved = rc.to_json();
  resolved["data"] = a.data;
  resolved["seeds"] = seeds;
  write_json(runs / "config.json", resolved);
  auto table = eval::run_ablation_matrix<T>(a.data, seeds, rc.train.steps, rc.model, rc.train, runs,
                                            [](int64_t step, const losses::LossBreakdown& b) {
                                              if (step % 500 == 0)
                                                log_event({{"event", "train"},
                                                           {"step", step},
                                                           {"bce", b.bce}});
                                            });
  table.write_csv(out);
  for (const auto& r : table.rows())
    log_event({{"event", "ablation"},
               {"ablation", r.ablation},
               {"test_in", r.in_mean},
               {"test_cross", r.cross_mean}});
  return 0;
}

template <typename T>
int cmd_plot(const Args& a) {
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  if (!a.emb.empty()) {
    auto rows = eval::read_embeddings_csv(a.emb);
    std::vector<std::vector<double>> pts;
    std::vector<std::string> series;
    for (const auto& r : rows) {
      pts.push_back(r.values);
      series.push_back(r.kind + (r.label ? " fake" : " real"));
    }
    auto xy = eval::tsne(pts);
    eval::write_scatter_svg(out, xy, series, "t-SNE of " + fs::path(a.emb).filename().string());
  } else if (!a.ckpt.empty() && !a.data.empty()) {
    auto state = train::load_checkpoint<T>(a.ckpt);
    auto manifest = corpus::load_manifest(a.data);
    train::ImageCache<T> images(a.data, manifest);
    eval::write_reconstruction_grid(state.model, manifest, images, a.split, a.pairs, out);
  } else {
    throw config::UsageError("plot needs --emb CSV, or --ckpt and --data");
  }
  log_event({{"event", "plot"}, {"out", out.string()}});
  return 0;
}

template <typename T>
int dispatch(const std::string& cmd, const Args& a, const config::RunConfig& rc) {
  if (cmd == "train") return cmd_train<T>(a, rc);
  if (cmd == "eval") return cmd_eval<T>(a);
  if (cmd == "export-emb") return cmd_export<T>(a);
  if (cmd == "ablate") return cmd_ablate<T>(a, rc);
  return cmd_plot<T>(a);
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int parse_and_dispatch(int argc, const char* const* argv) {
  CLI::App app{"Blended-identity disentanglement for forgery detection on synthetic faces",
               "disentaforge"};
  app.require_subcommand(1);
  Args a;
  Overrides gen_over, train_over, ablate_over;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic forgery corpus");
  gen->add_option("--out", a.out, "corpus directory")->required();
  gen->add_option("--config", a.config_file, "JSON config file");
  gen_over.add<int>(gen, "--identities", "generator", "identities", "procedural identities");
  gen_over.add<int>(gen, "--groups-per-cell,--groups", "generator", "groups_per_cell", "groups per cell");
  gen_over.add<int>(gen, "--frames-per-group,--frames", "generator", "frames_per_group", "frames per group");
  gen_over.add<int>(gen, "--image-size", "generator", "image_size", "image side in pixels");
  gen_over.add<uint64_t>(gen, "--seed", "generator", "seed", "generator seed");
  gen_over.add<std::string>(gen, "--holdout", "generator", "holdout", "held-out method");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--data", a.data, "corpus directory")->required();
  tr->add_option("--out", a.out, "run directory")->required();
  tr->add_option("--config", a.config_file, "JSON config file");
  tr->add_option("--resume", a.resume, "checkpoint directory to continue from");
  train_over.add_common_train(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", a.ckpt, "checkpoint directory")->required();
  ev->add_option("--data", a.data, "corpus directory")->required();
  ev->add_option("--out", a.out, "report.json path")->required();
  ev->add_option("--splits", a.splits, "comma-separated splits");

  auto* ex = app.add_subcommand("export-emb", "Export pooled feature embeddings as CSV");
  ex->add_option("--ckpt", a.ckpt, "checkpoint directory")->required();
  ex->add_option("--data", a.data, "corpus directory")->required();
  ex->add_option("--kinds", a.kinds, "comma-separated feature kinds")->required();
  ex->add_option("--out", a.out, "CSV path")->required();
  ex->add_option("--split", a.split, "split to export");
  ex->add_option("--max-samples", a.max_samples, "limit on exported samples (0: all)");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation ladder");
  ab->add_option("--data", a.data, "corpus directory")->required();
  ab->add_option("--out", a.out, "table CSV path")->required();
  ab->add_option("--seeds", a.seeds, "comma-separated seeds");
  ab->add_option("--runs", a.runs, "directory for per-run outputs (default: <out>.runs)");
  ab->add_option("--config", a.config_file, "JSON config file");
  ablate_over.add_common_train(ab);

  auto* pl = app.add_subcommand("plot", "t-SNE scatter of an embedding dump, or a reconstruction grid");
  pl->add_option("--emb", a.emb, "embedding CSV from export-emb");
  pl->add_option("--ckpt", a.ckpt, "checkpoint directory");
  pl->add_option("--data", a.data, "corpus directory");
  pl->add_option("--split", a.split, "split for the reconstruction grid");
  pl->add_option("--pairs", a.pairs, "columns in the reconstruction grid");
  pl->add_option("--out", a.out, "output .svg or .png")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    config::RunConfig rc;
    if (cmd == "gen-data" || cmd == "train" || cmd == "ablate") {
      const auto& over = cmd == "gen-data" ? gen_over : cmd == "train" ? train_over : ablate_over;
      rc = config::resolve_config(a.config(), over.collect());
    }
    if (cmd == "gen-data") {
      ensure_dir(a.out);
      auto m = corpus::generate_corpus(rc.generator, a.out);
      write_json(fs::path(a.out) / "config.json", rc.to_json());
      log_event({{"event", "gen-data"}, {"records", m.records.size()}, {"out", a.out}});
      return 0;
    }
    return deterministic_mode() ? dispatch<double>(cmd, a, rc) : dispatch<float>(cmd, a, rc);
  } catch (const config::UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const TrainingFault& e) {
    return fail("training", e.what(), 1);
  } catch (const IoError& e) {
    return fail("io", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
}

}  // namespace dforge::cli
