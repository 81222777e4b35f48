#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "dforge/kernels.hpp"
#include "test_util.hpp"

namespace k = dforge::kernels;
using dforge::testutil::random_tensor;

namespace {

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
std::vector<T> rand_vec(int64_t n, uint64_t seed) {
  return random_tensor<T>({n}, seed).vec();
}

struct GemmCase {
  bool ta, tb;
  int64_t m, n, k;
};

class GemmTest : public ::testing::TestWithParam<GemmCase> {};

TEST_P(GemmTest, ParallelMatchesReference) {
  const auto c = GetParam();
  auto a = rand_vec<double>(c.m * c.k, 1), b = rand_vec<double>(c.k * c.n, 2);
  auto init = rand_vec<double>(c.m * c.n, 3);
  for (bool acc : {false, true}) {
    auto r = init, p = init;
    k::reference::gemm(c.ta, c.tb, c.m, c.n, c.k, a.data(), b.data(), r.data(), acc);
    k::parallel::gemm(c.ta, c.tb, c.m, c.n, c.k, a.data(), b.data(), p.data(), acc);
    EXPECT_LT(max_abs_diff(r, p), 1e-12) << "accumulate=" << acc;
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmTest,
                         ::testing::Values(GemmCase{false, false, 7, 33, 5},
                                           GemmCase{false, false, 8, 64, 72},
                                           GemmCase{true, false, 13, 17, 9},
                                           GemmCase{false, true, 16, 12, 300},
                                           GemmCase{false, true, 5, 7, 19},
                                           GemmCase{true, true, 9, 4, 11},
                                           GemmCase{false, false, 1, 1, 1}));

class ConvTest : public ::testing::TestWithParam<k::ConvGeometry> {};

TEST_P(ConvTest, ForwardAndBackwardMatchReference) {
  const auto g = GetParam();
  const int64_t xs = g.batch * g.in_channels * g.in_h * g.in_w;
  const int64_t ys = g.batch * g.out_channels * g.out_h() * g.out_w();
  auto x = rand_vec<double>(xs, 4), w = rand_vec<double>(g.out_channels * g.patch(), 5);
  auto bias = rand_vec<double>(g.out_channels, 6), gy = rand_vec<double>(ys, 7);

  std::vector<double> yr(ys), yp(ys);
  k::reference::conv2d_forward(g, x.data(), w.data(), bias.data(), yr.data());
  k::parallel::conv2d_forward(g, x.data(), w.data(), bias.data(), yp.data());
  EXPECT_LT(max_abs_diff(yr, yp), 1e-12);

  std::vector<double> gxr(xs, 9.0), gxp(xs, -9.0);
  k::reference::conv2d_backward_input(g, w.data(), gy.data(), gxr.data());
  k::parallel::conv2d_backward_input(g, w.data(), gy.data(), gxp.data());
  EXPECT_LT(max_abs_diff(gxr, gxp), 1e-12);

  std::vector<double> gwr(w.size()), gwp(w.size()), gbr(bias.size()), gbp(bias.size());
  k::reference::conv2d_backward_weight(g, x.data(), gy.data(), gwr.data(), gbr.data());
  k::parallel::conv2d_backward_weight(g, x.data(), gy.data(), gwp.data(), gbp.data());
  EXPECT_LT(max_abs_diff(gwr, gwp), 1e-10);
  EXPECT_LT(max_abs_diff(gbr, gbp), 1e-10);
}

k::ConvGeometry geom(int64_t b, int64_t ci, int64_t h, int64_t co, int64_t kk, int64_t s, int64_t p) {
  k::ConvGeometry g;
  g.batch = b;
  g.in_channels = ci;
  g.in_h = g.in_w = h;
  g.out_channels = co;
  g.kernel = kk;
  g.stride = s;
  g.pad = p;
  return g;
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvTest,
                         ::testing::Values(geom(2, 3, 16, 4, 3, 2, 1), geom(3, 5, 9, 6, 3, 1, 1),
                                           geom(2, 8, 8, 8, 1, 1, 0), geom(1, 2, 7, 3, 3, 2, 1),
                                           geom(2, 4, 40, 4, 3, 1, 1), geom(2, 2, 5, 3, 5, 1, 2)));

TEST(Kernels, AdjointIdentityOfReferenceConv) {
  // <conv(x), gy> == <x, conv^T(gy)> checks the reference backward on its own.
  const auto g = geom(2, 3, 6, 4, 3, 2, 1);
  const int64_t xs = g.batch * g.in_channels * g.in_h * g.in_w;
  const int64_t ys = g.batch * g.out_channels * g.out_h() * g.out_w();
  auto x = rand_vec<double>(xs, 11), w = rand_vec<double>(g.out_channels * g.patch(), 12);
  auto gy = rand_vec<double>(ys, 13);
  std::vector<double> y(ys), gx(xs);
  k::reference::conv2d_forward<double>(g, x.data(), w.data(), nullptr, y.data());
  k::reference::conv2d_backward_input(g, w.data(), gy.data(), gx.data());
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < ys; ++i) lhs += y[i] * gy[i];
  for (int64_t i = 0; i < xs; ++i) rhs += x[i] * gx[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Kernels, ParallelResultsIndependentOfThreadCount) {
  const auto g = geom(6, 8, 20, 8, 3, 1, 1);
  const int64_t xs = g.batch * g.in_channels * g.in_h * g.in_w;
  const int64_t ys = g.batch * g.out_channels * g.out_h() * g.out_w();
  auto x = rand_vec<float>(xs, 21), w = rand_vec<float>(g.out_channels * g.patch(), 22);
  auto gy = rand_vec<float>(ys, 23);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> y(ys), gx(xs), gw(w.size()), gb(8);
    k::parallel::conv2d_forward<float>(g, x.data(), w.data(), nullptr, y.data());
    k::parallel::conv2d_backward_input(g, w.data(), gy.data(), gx.data());
    k::parallel::conv2d_backward_weight(g, x.data(), gy.data(), gw.data(), gb.data());
    y.insert(y.end(), gx.begin(), gx.end());
    y.insert(y.end(), gw.begin(), gw.end());
    return y;
  };
  const int hw = k::max_threads();
  auto one = run(1), many = run(4);
  omp_set_num_threads(hw);
  EXPECT_EQ(one, many);
}

}  // namespace
