#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/cli.hpp"
#include "dforge/config.hpp"

using namespace dforge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "disentaforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  ::testing::internal::CaptureStderr();
  ::testing::internal::CaptureStdout();
  const int code = cli::parse_and_dispatch(static_cast<int>(argv.size()), argv.data());
  ::testing::internal::GetCapturedStdout();
  return {code, ::testing::internal::GetCapturedStderr()};
}

json last_error(const std::string& err) {
  std::string last;
  std::stringstream ss(err);
  for (std::string line; std::getline(ss, line);)
    if (!line.empty()) last = line;
  return json::parse(last);
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dforge_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
  auto unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_EQ(last_error(unknown.err).at("error"), "usage");
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"train", "--data", "x"}).code, 2);  // --out missing
}

TEST(Cli, InvalidValuesAreUsageErrors) {
  auto r = run({"train", "--data", "/nonexistent", "--out", scratch("neg").string(), "--lr", "-0.1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(last_error(r.err).at("message").get<std::string>().find("lr"), std::string::npos);
  EXPECT_EQ(run({"train", "--data", "/x", "--out", "/y", "--ablation", "resnet"}).code, 2);
  EXPECT_EQ(run({"train", "--data", "/x", "--out", "/y", "--batch", "3"}).code, 2);
}

TEST(Cli, MalformedConfigFile) {
  auto cfg = scratch("bad.json");
  write_file(cfg, "{\"train\": {\"lr\": ");
  auto r = run({"train", "--data", "/x", "--out", "/y", "--config", cfg.string()});
  EXPECT_EQ(r.code, 2);
  write_file(cfg, R"({"train": {"learning_rate": 0.1}})");
  r = run({"train", "--data", "/x", "--out", "/y", "--config", cfg.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
  write_file(cfg, R"({"train": {"lr": "fast"}})");
  EXPECT_EQ(run({"train", "--data", "/x", "--out", "/y", "--config", cfg.string()}).code, 2);
  fs::remove(cfg);
}

TEST(Config, Precedence) {
  auto cfg = scratch("prec.json");
  write_file(cfg, R"({"train": {"lr": 0.01, "steps": 7}, "model": {"d": 8}})");
  auto file_only = config::resolve_config(cfg);
  EXPECT_EQ(file_only.train.lr, 0.01);
  EXPECT_EQ(file_only.train.steps, 7);
  EXPECT_EQ(file_only.model.d, 8);
  EXPECT_EQ(file_only.train.batch_size, train::TrainConfig{}.batch_size);
  auto both = config::resolve_config(cfg, json{{"train", {{"lr", 0.02}}}});
  EXPECT_EQ(both.train.lr, 0.02);
  EXPECT_EQ(both.train.steps, 7);
  EXPECT_EQ(config::resolve_config(std::nullopt).train.lr, 1e-4);
  EXPECT_THROW(config::resolve_config(scratch("missing.json")), std::exception);
  fs::remove(cfg);
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new fs::path(scratch("corpus"));
    auto r = run({"gen-data", "--out", data_->string(), "--groups", "2", "--frames", "4",
                  "--image-size", "16"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(*data_);
    delete data_;
  }
  static fs::path* data_;
};
fs::path* CliRun::data_ = nullptr;

const std::vector<std::string> kTiny{"--image-size", "16", "--d", "4", "--encoder-depth", "3", "--classifier-hidden", "6",
                                     "--batch", "4", "--steps", "2", "--checkpoint-every", "0"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

TEST_F(CliRun, GenDataWritesManifest) {
  EXPECT_TRUE(fs::exists(*data_ / "manifest.json"));
  EXPECT_EQ(read_json(*data_ / "config.json").at("generator").at("image_size"), 16);
}

TEST_F(CliRun, TrainEvalExportPlot) {
  auto out = scratch("run");
  auto cfg = scratch("run.json");
  write_file(cfg, R"({"train": {"lr": 0.01, "lambda3": 0}})");
  auto r = run(with_tiny({"train", "--data", data_->string(), "--out", out.string(), "--config",
                          cfg.string(), "--lr", "0.002"}));
  ASSERT_EQ(r.code, 0) << r.err;
  auto resolved = read_json(out / "config.json");
  EXPECT_EQ(resolved.at("train").at("lr"), 0.002);
  EXPECT_EQ(resolved.at("train").at("lambda3"), 0.0);

  // lambda3 = 0: the contrastive terms are still computed but not weighted.
  std::ifstream log(out / "log.jsonl");
  for (std::string line; std::getline(log, line);) {
    auto b = losses::LossBreakdown::from_json(json::parse(line));
    EXPECT_NE(b.con_real, 0.0);
    EXPECT_NEAR(b.total, 5 * b.bce + 0.1 * (b.rec_self + b.rec_cross) + 0.5 * b.info, 1e-9);
  }

  const auto ckpt = (out / "ckpt-2").string();
  auto report = (out / "report.json").string();
  r = run({"eval", "--ckpt", ckpt, "--data", data_->string(), "--out", report});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = read_json(report);
  EXPECT_TRUE(rep.at("splits").contains("test_cross"));

  auto csv = (out / "emb.csv").string();
  r = run({"export-emb", "--ckpt", ckpt, "--data", data_->string(), "--kinds",
           "id_pure[1],art_pure[1]", "--out", csv, "--max-samples", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(run({"export-emb", "--ckpt", ckpt, "--data", data_->string(), "--kinds", "nope",
                 "--out", csv})
                .code,
            2);

  r = run({"plot", "--emb", csv, "--out", (out / "tsne.svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"plot", "--ckpt", ckpt, "--data", data_->string(), "--pairs", "2", "--out",
           (out / "grid.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "grid.png"));

  auto missing = run({"eval", "--ckpt", (out / "ckpt-99").string(), "--data", data_->string(),
                      "--out", report});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(last_error(missing.err).at("error"), "io");
  fs::remove_all(out);
  fs::remove(cfg);
}

TEST_F(CliRun, ResumeContinuesTheLog) {
  auto out = scratch("resume");
  ASSERT_EQ(run(with_tiny({"train", "--data", data_->string(), "--out", out.string()})).code, 0);
  auto r = run({"train", "--data", data_->string(), "--out", out.string(), "--resume",
                (out / "ckpt-2").string(), "--image-size", "16", "--d", "4", "--encoder-depth", "3",
                "--classifier-hidden", "6", "--batch", "4", "--steps", "4", "--checkpoint-every",
                "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "ckpt-4" / "state.bin"));
  std::ifstream log(out / "log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 4);
  fs::remove_all(out);
}

TEST_F(CliRun, MissingCorpusIsRuntimeError) {
  auto r = run(with_tiny({"train", "--data", scratch("nothing").string(), "--out",
                          scratch("nowhere").string()}));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(last_error(r.err).at("error"), "io");
}

}  // namespace
