#include <gtest/gtest.h>

#include "dforge/autograd.hpp"
#include "test_util.hpp"

using namespace dforge;
using testutil::grad_check;
using testutil::probe;
using testutil::random_param;

namespace {

constexpr double kTol = 1e-6;

TEST(Autograd, ElementwiseGradients) {
  auto a = random_param({2, 3, 4}, 1), b = random_param({2, 3, 4}, 2);
  auto pos = random_param({2, 3, 4}, 3, 0.5, 2.0);
  const std::vector<std::pair<const char*, std::function<Var<double>()>>> cases = {
      {"add", [&] { return probe(a + b); }},
      {"sub", [&] { return probe(a - b); }},
      {"mul", [&] { return probe(a * b); }},
      {"div", [&] { return probe(a / pos); }},
      {"scale", [&] { return probe(ag::scale(a, 2.5)); }},
      {"add_scalar", [&] { return probe(ag::add_scalar(a, 0.7)); }},
      {"one_minus", [&] { return probe(ag::one_minus(a)); }},
      {"silu", [&] { return probe(ag::silu(a)); }},
      {"sigmoid", [&] { return probe(ag::sigmoid(a)); }},
      {"exp", [&] { return probe(ag::exp(a)); }},
      {"log", [&] { return probe(ag::log(pos)); }},
      {"sqrt", [&] { return probe(ag::sqrt(pos)); }},
      {"abs", [&] { return probe(ag::abs(a)); }},
      {"square", [&] { return probe(ag::square(a)); }},
      {"clamp", [&] { return probe(ag::clamp(a, -0.5, 0.5)); }},
      {"sum", [&] { return ag::sum(ag::square(a)); }},
      {"mean", [&] { return ag::mean(ag::square(a)); }},
      {"sum_last", [&] { return probe(ag::sum_last(a)); }},
      {"softmax_last", [&] { return probe(ag::softmax_last(a)); }},
      {"reshape", [&] { return probe(ag::reshape(a, Shape{6, 4})); }},
      {"slice", [&] { return probe(ag::slice(a, 1, 1, 3)); }},
      {"concat", [&] { return probe(ag::concat<double>({a, b, a}, 2)); }},
  };
  for (const auto& [name, f] : cases) {
    auto r = grad_check(f, {a, b, pos}, 1e-5);
    EXPECT_LT(r.rel_error, kTol) << name;
  }
}

TEST(Autograd, SpatialAndDenseGradients) {
  auto x = random_param({2, 3, 5, 5}, 4);
  auto w = random_param({4, 3, 3, 3}, 5), bias = random_param({4}, 6);
  auto w1 = random_param({4, 3, 1, 1}, 7);
  auto c = random_param({3}, 8);
  auto m = random_param({2, 6}, 9), lw = random_param({4, 6}, 10), lb = random_param({4}, 11);
  auto p = random_param({2, 3, 4}, 12), q = random_param({2, 4, 5}, 13);
  auto qt = random_param({2, 5, 4}, 14), pt = random_param({2, 4, 3}, 15);
  const std::vector<std::pair<const char*, std::function<Var<double>()>>> cases = {
      {"conv3x3", [&] { return probe(ag::conv2d(x, w, bias, 1, 1)); }},
      {"conv3x3/s2", [&] { return probe(ag::conv2d(x, w, bias, 2, 1)); }},
      {"conv1x1", [&] { return probe(ag::conv2d(x, w1, Var<double>(), 1, 0)); }},
      {"global_avg_pool", [&] { return probe(ag::global_avg_pool(x)); }},
      {"channel_mean", [&] { return probe(ag::channel_mean(x)); }},
      {"broadcast_channel", [&] { return probe(ag::broadcast_channel(c, x.shape())); }},
      {"upsample2x", [&] { return probe(ag::upsample2x(x)); }},
      {"linear", [&] { return probe(ag::linear(m, lw, lb)); }},
      {"bmm", [&] { return probe(ag::bmm(p, q, false, false)); }},
      {"bmm/ta", [&] { return probe(ag::bmm(pt, q, true, false)); }},
      {"bmm/tb", [&] { return probe(ag::bmm(p, qt, false, true)); }},
      {"bmm/tatb", [&] { return probe(ag::bmm(pt, qt, true, true)); }},
  };
  for (const auto& [name, f] : cases) {
    auto r = grad_check(f, {x, w, bias, w1, c, m, lw, lb, p, q, qt, pt});
    EXPECT_LT(r.rel_error, kTol) << name;
    EXPECT_GT(r.analytic_norm, 0.0) << name;
  }
}

TEST(Autograd, SharedSubgraphAccumulates) {
  auto a = random_param({3}, 20);
  auto f = [&] {
    auto s = ag::silu(a);
    return ag::sum(s * s + ag::exp(s));
  };
  EXPECT_LT(grad_check(f, {a}).rel_error, kTol);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto a = random_param({4}, 21);
  NoGradGuard guard;
  auto y = ag::sum(ag::square(a));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autograd, ShapeMismatchThrows) {
  auto a = random_param({2, 3}, 22), b = random_param({3, 2}, 23);
  EXPECT_THROW(ag::add(a, b), InvalidArgument);
  EXPECT_THROW(ag::concat<double>({a, b}, 0), InvalidArgument);
  EXPECT_THROW(ag::slice(a, 1, 2, 5), InvalidArgument);
}

TEST(Autograd, ClampGradientVanishesOutsideRange) {
  auto a = Var<double>::parameter(Tensor<double>({3}, std::vector<double>{-2.0, 0.1, 3.0}));
  ag::sum(ag::clamp(a, -1.0, 1.0)).backward();
  EXPECT_EQ(a.grad().vec(), (std::vector<double>{0.0, 1.0, 0.0}));
}

}  // namespace
