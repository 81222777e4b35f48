#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dforge/iacc.hpp"
#include "test_util.hpp"

using namespace dforge;
using namespace dforge::iacc;
using dforge::testutil::grad_check;
using dforge::testutil::probe;
using dforge::testutil::random_tensor;

namespace {

Var<double> vec(std::vector<double> v) {
  const auto n = static_cast<int64_t>(v.size());
  return Var<double>::constant(Tensor<double>(Shape{n}, std::move(v)));
}

Var<double> filled(Shape s, double v) { return Var<double>::constant(Tensor<double>(std::move(s), v)); }

Tensor<double> normal_tensor(Shape s, uint64_t seed, double mu = 0, double sd = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(mu, sd);
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

TEST(Stats, ConstantFeatureHitsVarianceFloor) {
  auto s = gaussian_stats(filled(Shape{2, 3, 4, 4}, 0.7));
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(s.mean.value()[c], 0.7);
    EXPECT_DOUBLE_EQ(s.var.value()[c], kVarianceFloor);
  }
}

TEST(Stats, TwoValueChannel) {
  Tensor<double> t(Shape{2, 1, 1, 2}, std::vector<double>{0, 2, 2, 0});
  auto s = gaussian_stats(Var<double>::constant(t));
  EXPECT_DOUBLE_EQ(s.mean.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(s.var.value()[0], 1.0);
}

TEST(Stats, StandardNormalMonteCarlo) {
  const int64_t n = 100000;
  auto s = gaussian_stats(Var<double>::constant(normal_tensor(Shape{n, 1, 1, 1}, 17)));
  EXPECT_NEAR(s.mean.value()[0], 0.0, 3.0 / std::sqrt(double(n)));
  EXPECT_NEAR(s.var.value()[0], 1.0, 3.0 * std::sqrt(2.0 / double(n)));
}

TEST(Stats, DegenerateBatch) {
  EXPECT_THROW(gaussian_stats(filled(Shape{1, 3, 1, 1}, 0.0)), InvalidArgument);
  EXPECT_THROW(gaussian_stats(filled(Shape{4, 3}, 0.0)), InvalidArgument);
}

TEST(Kl, ClosedFormCases) {
  GaussianStats<double> p{vec({0.0}), vec({1.0})}, q{vec({1.0}), vec({1.0})};
  EXPECT_NEAR(kl_diag_gauss(p, q).item(), 0.5, 1e-15);
  EXPECT_NEAR(kl_diag_gauss(p, p).item(), 0.0, 1e-15);
  GaussianStats<double> r{vec({0.0, 1.0}), vec({1.0, 1.0})};
  EXPECT_THROW(kl_diag_gauss(p, r), InvalidArgument);
}

TEST(Kl, MatchesMonteCarloEstimate) {
  const std::vector<double> mp{0.3, -1.0, 2.0}, vp{0.5, 2.0, 0.8};
  const std::vector<double> mq{-0.4, 0.5, 1.2}, vq{1.7, 1.1, 0.3};
  GaussianStats<double> p{vec(mp), vec(vp)}, q{vec(mq), vec(vq)};
  const double analytic = kl_diag_gauss(p, q).item();
  std::mt19937_64 rng(123);
  std::normal_distribution<double> z(0.0, 1.0);
  const int samples = 1000000;
  double acc = 0;
  for (size_t c = 0; c < mp.size(); ++c) {
    auto logpdf = [](double x, double m, double v) {
      return -0.5 * std::log(2 * M_PI * v) - (x - m) * (x - m) / (2 * v);
    };
    double s = 0;
    for (int i = 0; i < samples; ++i) {
      const double x = mp[c] + std::sqrt(vp[c]) * z(rng);
      s += logpdf(x, mp[c], vp[c]) - logpdf(x, mq[c], vq[c]);
    }
    acc += s / samples;
  }
  const double mc = acc / double(mp.size());
  EXPECT_NEAR(analytic, mc, 0.02 * mc);
}

TEST(Purify, ZeroGateIsIdentity) {
  auto f = Var<double>::constant(random_tensor<double>(Shape{3, 2, 4, 4}, 1));
  auto out = purify(f, filled(f.shape(), 0.0), 9, NoiseMode::sample);
  EXPECT_EQ(out.value(), f.value());
}

TEST(Purify, FullGateMeanModeIsMeanField) {
  auto f = Var<double>::constant(random_tensor<double>(Shape{3, 2, 4, 4}, 2));
  auto out = purify(f, filled(f.shape(), 1.0), 9, NoiseMode::mean);
  auto s = gaussian_stats(f);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x)
          EXPECT_NEAR(out.value().at(n, c, y, x), s.mean.value()[c], 1e-15);
}

TEST(Purify, FullGateSampleModeMatchesMoments) {
  auto base = normal_tensor(Shape{512, 3, 2, 2}, 5);
  for (int64_t n = 0; n < 512; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 4; ++i) {
        auto& v = base.at(n, c, i / 2, i % 2);
        v = 0.5 + double(c) + (1.0 + c) * v;
      }
  auto f = Var<double>::constant(base);
  auto out = purify(f, filled(f.shape(), 1.0), 31, NoiseMode::sample);
  auto want = gaussian_stats(f), got = gaussian_stats(out);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(got.mean.value()[c], want.mean.value()[c], 0.1 * std::abs(want.mean.value()[c]));
    EXPECT_NEAR(got.var.value()[c], want.var.value()[c], 0.1 * want.var.value()[c]);
  }
}

TEST(Purify, SeededAndShapeChecked) {
  auto f = Var<double>::constant(random_tensor<double>(Shape{2, 2, 3, 3}, 3));
  auto g = filled(f.shape(), 0.5);
  EXPECT_EQ(purify(f, g, 4, NoiseMode::sample).value(), purify(f, g, 4, NoiseMode::sample).value());
  EXPECT_NE(purify(f, g, 4, NoiseMode::sample).value(), purify(f, g, 5, NoiseMode::sample).value());
  EXPECT_THROW(purify(f, filled(Shape{2, 2, 3, 2}, 0.5), 4, NoiseMode::mean), InvalidArgument);
}

TEST(Purify, GradCheck) {
  auto f = Var<double>::parameter(random_tensor<double>(Shape{2, 3, 3, 3}, 6));
  auto g = Var<double>::parameter(random_tensor<double>(Shape{2, 3, 3, 3}, 7, 0.1, 0.9));
  for (auto mode : {NoiseMode::sample, NoiseMode::mean}) {
    auto r = grad_check([&] { return probe(purify(f, g, 11, mode)); }, {f, g});
    EXPECT_LT(r.rel_error, 1e-3);
  }
}

net::DisentangledBundle<double> bundle_of(const Var<double>& id_raw, const Var<double>& art_raw,
                                          const Var<double>& art_pure) {
  net::DisentangledBundle<double> b;
  for (int n = 0; n < 2; ++n) {
    b.id_blend[n] = id_raw;
    b.id_raw[n] = id_raw;
    b.art_raw[n] = art_raw;
    b.id_pure[n] = id_raw;
    b.art_pure[n] = art_pure;
  }
  return b;
}

TEST(InfoLoss, IdenticalDistributions) {
  auto f = Var<double>::constant(random_tensor<double>(Shape{2, 3, 4, 4}, 8));
  auto t = info_loss(bundle_of(f, f, f));
  EXPECT_NEAR(t.total.item(), 1.5, 1e-12);
  for (int n = 0; n < 2; ++n) {
    EXPECT_NEAR(t.kl_id_art[n].item(), 0.0, 1e-12);
    EXPECT_NEAR(t.kl_art_art[n].item(), 0.0, 1e-12);
  }
}

TEST(InfoLoss, ClampedLimit) {
  auto art = Var<double>::constant(random_tensor<double>(Shape{2, 3, 4, 4}, 9));
  auto id = Var<double>::constant(random_tensor<double>(Shape{2, 3, 4, 4}, 10, 1000.0, 1001.0));
  auto t = info_loss(bundle_of(id, art, art));
  EXPECT_GT(t.kl_id_art[0].item() + t.kl_id_art[1].item(), kKlClamp);
  EXPECT_NEAR(t.total.item(), 0.5 + std::exp(-20.0), 1e-12);
}

TEST(InfoLoss, GradCheck) {
  auto id = Var<double>::parameter(random_tensor<double>(Shape{2, 2, 3, 3}, 12));
  auto art = Var<double>::parameter(random_tensor<double>(Shape{2, 2, 3, 3}, 13, -0.5, 2.0));
  auto pure = Var<double>::parameter(random_tensor<double>(Shape{2, 2, 3, 3}, 14, -1.0, 1.5));
  auto r = grad_check([&] { return info_loss(bundle_of(id, art, pure)).total; }, {id, art, pure});
  EXPECT_LT(r.rel_error, 1e-3);
  EXPECT_GT(r.analytic_norm, 0.0);
}

}  // namespace
