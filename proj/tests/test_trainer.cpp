#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dforge/trainer.hpp"
#include "test_util.hpp"

using namespace dforge;
using namespace dforge::train;
namespace fs = std::filesystem;

namespace {

net::ModelConfig tiny_model() {
  net::ModelConfig c;
  c.d = 4;
  c.image_size = 16;
  c.encoder_depth = 3;
  c.classifier_hidden = 6;
  return c;
}

TrainConfig tiny_train(net::Ablation a = net::Ablation::full) {
  TrainConfig t;
  t.batch_size = 4;
  t.steps = 3;
  t.lr = 1e-3;
  t.ablation = a;
  t.checkpoint_every = 0;
  return t;
}

// One small corpus on disk shared by the whole suite.
class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "dforge_test_trainer_corpus");
    fs::remove_all(*root_);
    corpus::GeneratorConfig g;
    g.groups_per_cell = 2;
    g.frames_per_group = 4;
    g.image_size = 16;
    manifest_ = new corpus::CorpusManifest(corpus::generate_corpus(g, *root_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete manifest_;
    delete root_;
  }
  static fs::path* root_;
  static corpus::CorpusManifest* manifest_;

  static fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("dforge_test_" + name);
    fs::remove_all(p);
    return p;
  }

  template <typename T>
  static void run(TrainState<T>& s, int64_t steps) {
    ImageCache<T> cache(*root_, *manifest_);
    for (int64_t i = 0; i < steps; ++i) train_step(s, *manifest_, cache);
  }
};
fs::path* TrainerTest::root_ = nullptr;
corpus::CorpusManifest* TrainerTest::manifest_ = nullptr;

corpus::CorpusManifest two_real_manifest(int n_real, int n_fake) {
  corpus::CorpusManifest m;
  auto& split = m.splits["train"];
  for (int i = 0; i < n_real + n_fake; ++i) {
    corpus::ForgeryRecord r;
    r.sample_id = "s" + std::to_string(i);
    r.label = i < n_real ? corpus::Label::real : corpus::Label::fake;
    m.records.push_back(r);
    split.push_back(r.sample_id);
  }
  return m;
}

TEST(SamplePairs, BatchOfEightGivesFourPairs) {
  auto m = two_real_manifest(10, 10);
  Rng rng(1);
  auto b = sample_pairs(m, "train", 8, rng);
  ASSERT_EQ(b.real_ids.size(), 4u);
  ASSERT_EQ(b.fake_ids.size(), 4u);
  for (const auto& id : b.real_ids) EXPECT_EQ(m.record(id).label, corpus::Label::real);
  for (const auto& id : b.fake_ids) EXPECT_EQ(m.record(id).label, corpus::Label::fake);
  EXPECT_EQ(std::set<std::string>(b.real_ids.begin(), b.real_ids.end()).size(), 4u);
  EXPECT_FALSE(b.repeated);
}

TEST(SamplePairs, DeterministicForSeed) {
  auto m = two_real_manifest(10, 10);
  Rng a(7), b(7);
  for (int i = 0; i < 5; ++i) {
    auto x = sample_pairs(m, "train", 8, a), y = sample_pairs(m, "train", 8, b);
    EXPECT_EQ(x.real_ids, y.real_ids);
    EXPECT_EQ(x.fake_ids, y.fake_ids);
  }
}

TEST(SamplePairs, SingleRealRepeats) {
  auto m = two_real_manifest(1, 10);
  Rng rng(3);
  auto b = sample_pairs(m, "train", 8, rng);
  EXPECT_TRUE(b.repeated);
  for (const auto& id : b.real_ids) EXPECT_EQ(id, "s0");
}

TEST(SamplePairs, Errors) {
  Rng rng(3);
  EXPECT_THROW(sample_pairs(two_real_manifest(0, 4), "train", 8, rng), InvalidArgument);
  EXPECT_THROW(sample_pairs(two_real_manifest(4, 4), "train", 7, rng), InvalidArgument);
}

TEST(Adam, SingleStepMatchesHandComputation) {
  net::ParameterStore<double> store;
  auto p = store.create("p", Shape{2}, 0, 0);
  p.mutable_value() = Tensor<double>(Shape{2}, std::vector<double>{1.0, -2.0});
  ag::sum(ag::square(p)).backward();  // grad = 2p
  optim::Adam<double> opt(0.1);
  opt.step(store);
  // m = 0.1 g, v = 0.001 g^2; bias-corrected m/sqrt(v) = sign(g).
  EXPECT_NEAR(p.value()[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value()[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_EQ(opt.t(), 1);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  auto t = tiny_train();
  t.weights.contrastive = 0.25;
  auto back = TrainConfig::from_json(t.to_json());
  EXPECT_EQ(back.to_json(), t.to_json());
  t.lr = -1;
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST_F(TrainerTest, EfnHasOnlyBce) {
  TrainState<double> s(tiny_model(), tiny_train(net::Ablation::efn));
  run(s, 1);
  const auto& b = s.history.at(0);
  EXPECT_GT(b.bce, 0.0);
  EXPECT_EQ(b.rec_self, 0.0);
  EXPECT_EQ(b.rec_cross, 0.0);
  EXPECT_EQ(b.con_real, 0.0);
  EXPECT_EQ(b.con_fake, 0.0);
  EXPECT_EQ(b.info, 0.0);
}

TEST_F(TrainerTest, AblationsPopulateTheirTerms) {
  TrainState<double> pd(tiny_model(), tiny_train(net::Ablation::pd));
  TrainState<double> pi(tiny_model(), tiny_train(net::Ablation::pd_iacc));
  TrainState<double> full(tiny_model(), tiny_train(net::Ablation::full));
  run(pd, 1);
  run(pi, 1);
  run(full, 1);
  EXPECT_GT(pd.history[0].rec_self, 0.0);
  EXPECT_EQ(pd.history[0].info, 0.0);
  EXPECT_GT(pi.history[0].info, 0.0);
  EXPECT_EQ(pi.history[0].con_real, 0.0);
  EXPECT_NE(full.history[0].con_real, 0.0);
}

TEST_F(TrainerTest, ZeroAuxiliaryWeightsLeaveOnlyBce) {
  auto tc = tiny_train();
  tc.weights = {5.0, 0.0, 0.0, 0.0};
  TrainState<double> s(tiny_model(), tc);
  run(s, 2);
  for (const auto& b : s.history) {
    EXPECT_GT(b.info, 0.0);
    EXPECT_EQ(b.total, 5.0 * b.bce);
  }
}

TEST_F(TrainerTest, SameSeedSameHistory) {
  TrainState<double> a(tiny_model(), tiny_train()), b(tiny_model(), tiny_train());
  run(a, 3);
  run(b, 3);
  EXPECT_EQ(a.history, b.history);
  auto tc = tiny_train();
  tc.seed = 1;
  TrainState<double> c(tiny_model(), tc);
  run(c, 3);
  EXPECT_NE(a.history, c.history);
}

TEST_F(TrainerTest, ResumeIsBitwiseIdentical) {
  TrainState<double> straight(tiny_model(), tiny_train());
  run(straight, 3);

  TrainState<double> first(tiny_model(), tiny_train());
  run(first, 2);
  auto dir = scratch("resume_ckpt");
  save_checkpoint(first, dir);
  auto resumed = load_checkpoint<double>(dir, net::Ablation::full);
  EXPECT_EQ(resumed.step, 2);
  EXPECT_EQ(resumed.history, first.history);
  run(resumed, 1);

  EXPECT_EQ(resumed.history, straight.history);
  const auto& pa = straight.model.params().entries();
  const auto& pb = resumed.model.params().entries();
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  }
  EXPECT_EQ(straight.opt.m(), resumed.opt.m());
  EXPECT_EQ(straight.opt.v(), resumed.opt.v());
  fs::remove_all(dir);
}

TEST_F(TrainerTest, CheckpointGuards) {
  EXPECT_THROW(load_checkpoint<double>(scratch("no_such_ckpt")), IoError);

  TrainState<double> efn(tiny_model(), tiny_train(net::Ablation::efn));
  auto dir = scratch("efn_ckpt");
  save_checkpoint(efn, dir);
  EXPECT_THROW(load_checkpoint<double>(dir, net::Ablation::full), InvalidArgument);
  EXPECT_NO_THROW(load_checkpoint<float>(dir, net::Ablation::efn));

  const auto file = dir / "state.bin";
  const auto size = fs::file_size(file);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(size / 2));
    char c;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.write(&c, 1);
  }
  EXPECT_THROW(load_checkpoint<double>(dir), IoError);
  fs::resize_file(file, size / 3);
  EXPECT_THROW(load_checkpoint<double>(dir), IoError);
  fs::remove_all(dir);
}

TEST_F(TrainerTest, DecoderConditionedOnArtifactsAfterOneStep) {
  TrainState<double> s(tiny_model(), tiny_train());
  run(s, 1);
  ImageCache<double> cache(*root_, *manifest_);
  const auto& train = manifest_->splits.at("train");
  auto b = s.model.disentangle(cache.batch({train[0], train[1]}), 0, iacc::NoiseMode::mean);
  auto id0 = ag::slice(b.ID, 0, 0, 1);
  auto out_a = s.model.decode_face(id0, ag::slice(b.ART, 0, 0, 1)).value();
  auto out_b = s.model.decode_face(id0, ag::slice(b.ART, 0, 1, 2)).value();
  double l1 = 0;
  for (int64_t i = 0; i < out_a.numel(); ++i) l1 += std::abs(out_a[i] - out_b[i]);
  EXPECT_GT(l1, 0.0);
}

TEST_F(TrainerTest, RunTrainingWritesArtifacts) {
  auto out = scratch("run_training");
  auto tc = tiny_train();
  tc.checkpoint_every = 2;
  auto res = run_training<double>(tiny_model(), tc, *root_, out, nlohmann::json::object());
  EXPECT_EQ(res.history.size(), 3u);
  EXPECT_TRUE(fs::exists(out / "ckpt-2" / "state.bin"));
  EXPECT_TRUE(fs::exists(out / "ckpt-3" / "state.bin"));
  EXPECT_EQ(res.final_checkpoint, out / "ckpt-3");
  std::ifstream log(out / "log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_THROW(run_training<double>(tiny_model(), tc, scratch("no_corpus"), out / "x",
                                    nlohmann::json::object()),
               IoError);
  fs::remove_all(out);
}

}  // namespace
