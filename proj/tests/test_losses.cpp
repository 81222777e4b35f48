#include <gtest/gtest.h>

#include <cmath>

#include "dforge/losses.hpp"
#include "test_util.hpp"

using namespace dforge;
using namespace dforge::losses;
using dforge::testutil::grad_check;
using dforge::testutil::random_tensor;

namespace {

Var<double> probs(std::vector<double> p) {
  const auto n = static_cast<int64_t>(p.size());
  return Var<double>::constant(Tensor<double>(Shape{n}, std::move(p)));
}

Var<double> img(uint64_t seed) {
  return Var<double>::constant(random_tensor<double>(Shape{2, 3, 8, 8}, seed, 0.0, 1.0));
}

Var<double> plus(const Var<double>& a, double s) { return Var<double>::constant((a + s).value()); }

TEST(Bce, HandValues) {
  EXPECT_NEAR(bce_loss(probs({0.5, 0.5}), {1.0, 0.0}).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(probs({0.9}), {0.0}).item(), -std::log(0.1), 1e-12);
  const double perfect = bce_loss(probs({1.0, 0.0}), {1.0, 0.0}).item();
  EXPECT_GT(perfect, 0.0);
  EXPECT_LT(perfect, 1e-6);
  EXPECT_THROW(bce_loss(probs({0.5, 0.5}), {1.0}), InvalidArgument);
}

TEST(Bce, GradCheck) {
  auto p = Var<double>::parameter(random_tensor<double>(Shape{4}, 1, 0.05, 0.95));
  auto r = grad_check([&] { return bce_loss(p, {1.0, 0.0, 1.0, 0.0}); }, {p}, 1e-5);
  EXPECT_LT(r.rel_error, 1e-6);
}

TEST(Reconstruction, IdenticalIsZero) {
  auto a = img(1), b = img(2);
  auto [rs, rc] = reconstruction_loss<double>({a, b}, {a, b}, {a, b});
  EXPECT_EQ(rs.item(), 0.0);
  EXPECT_EQ(rc.item(), 0.0);
}

TEST(Reconstruction, ConstantOffset) {
  auto a = img(1), b = img(2);
  auto [rs, rc] = reconstruction_loss<double>({a, b}, {plus(a, 0.1), b}, {a, b});
  EXPECT_NEAR(rs.item(), 0.1, 1e-12);
  auto [rs2, rc2] = reconstruction_loss<double>({a, b}, {plus(a, 0.1), plus(b, 0.1)}, {a, b});
  EXPECT_NEAR(rs2.item(), 0.2, 1e-12);
  EXPECT_EQ(rc2.item(), 0.0);
}

TEST(Reconstruction, RangeOnRandomImages) {
  for (uint64_t s = 0; s < 10; ++s) {
    auto [rs, rc] = reconstruction_loss<double>({img(s), img(s + 100)}, {img(s + 200), img(s + 300)},
                                        {img(s + 400), img(s + 500)});
    EXPECT_GE(rs.item(), 0.0);
    EXPECT_LE(rs.item(), 2.0);
    EXPECT_GE(rc.item(), 0.0);
    EXPECT_LE(rc.item(), 2.0);
  }
  EXPECT_THROW(reconstruction_loss<double>({img(1), img(2)},
                                   {Var<double>::constant(Tensor<double>(Shape{2, 3, 4, 4})), img(2)},
                                   {img(1), img(2)}),
               InvalidArgument);
}

net::DisentangledBundle<double> bundle(const Tensor<double>& id, const Tensor<double>& art) {
  net::DisentangledBundle<double> b;
  for (int n = 0; n < 2; ++n) {
    b.id_pure[n] = Var<double>::constant(id);
    b.art_pure[n] = Var<double>::constant(art);
  }
  return b;
}

TEST(Contrastive, HandCases) {
  // Two channels, one pixel: i = (1, 0), a orthogonal = (0, 1).
  Tensor<double> i(Shape{1, 2, 1, 1}, std::vector<double>{1, 0});
  Tensor<double> a_orth(Shape{1, 2, 1, 1}, std::vector<double>{0, 1});
  auto same = bundle(i, i);
  auto orth = bundle(i, a_orth);
  auto [cr, cf] = separation_contrastive_loss(same, orth);
  EXPECT_NEAR(cr.item(), 0.0, 1e-12);
  EXPECT_NEAR(cf.item(), 0.0, 1e-12);
  auto [cr2, cf2] = separation_contrastive_loss(same, same);
  EXPECT_NEAR(cf2.item(), 2.0, 1e-12);  // 1 per branch
  EXPECT_NEAR(cr2.item(), 0.0, 1e-12);
}

TEST(Contrastive, ZeroVectorsStayFinite) {
  Tensor<double> z(Shape{2, 3, 2, 2});
  auto [cr, cf] = separation_contrastive_loss(bundle(z, z), bundle(z, z));
  EXPECT_TRUE(std::isfinite(cr.item()));
  EXPECT_TRUE(std::isfinite(cf.item()));
}

TEST(Contrastive, GradientDescentLowersFakeTerm) {
  auto id = Var<double>::parameter(random_tensor<double>(Shape{3, 4, 2, 2}, 21));
  auto art = Var<double>::parameter(random_tensor<double>(Shape{3, 4, 2, 2}, 22));
  auto eval = [&] {
    net::DisentangledBundle<double> f;
    for (int n = 0; n < 2; ++n) {
      f.id_pure[n] = id;
      f.art_pure[n] = art;
    }
    return separation_contrastive_loss(f, f).second;
  };
  auto r = grad_check(eval, {id, art});
  EXPECT_LT(r.rel_error, 1e-6);
  const double before = eval().item();
  for (int it = 0; it < 50; ++it) {
    id.zero_grad();
    art.zero_grad();
    eval().backward();
    for (int64_t k = 0; k < art.numel(); ++k) art.mutable_value()[k] -= 0.1 * art.grad()[k];
  }
  EXPECT_LT(eval().item(), before);
}

TEST(Total, HandValues) {
  LossWeights w;
  LossBreakdown b;
  b.info = 1.5;
  EXPECT_NEAR(total_loss(b, w).total, 0.75, 1e-12);
  b = {};
  b.bce = 0.6931;
  EXPECT_NEAR(total_loss(b, w).total, 3.4655, 1e-12);
  LossBreakdown all{1, 2, 3, 4, 5, 6, 0};
  EXPECT_EQ(total_loss(all, LossWeights{0, 0, 0, 0}).total, 0.0);
  EXPECT_NEAR(total_loss(all, w).total, 5 * 1 + 0.1 * 5 + 0.5 * 9 + 0.5 * 6, 1e-12);
}

TEST(Total, NonFiniteNamesComponent) {
  LossBreakdown b;
  b.rec_cross = std::nan("");
  try {
    total_loss(b, LossWeights{}, 12);
    FAIL() << "expected TrainingFault";
  } catch (const TrainingFault& e) {
    EXPECT_EQ(e.component(), "rec_cross");
    EXPECT_EQ(e.step(), 12);
  }
}

TEST(Total, WeightsValidate) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  EXPECT_THROW((LossWeights{-1, 0, 0, 0}.validate()), InvalidArgument);
  EXPECT_THROW((LossWeights{1, 0, std::nan(""), 0}.validate()), InvalidArgument);
}

TEST(Total, DifferentiableSumMatchesBreakdown) {
  LossTerms<double> t;
  t.bce = Var<double>::constant(Tensor<double>::scalar(0.4));
  t.rec_self = Var<double>::constant(Tensor<double>::scalar(0.2));
  t.info = Var<double>::constant(Tensor<double>::scalar(1.1));
  LossWeights w;
  EXPECT_NEAR(weighted_total(t, w).item(), breakdown_of(t, w).total, 1e-12);
  EXPECT_EQ(breakdown_of(t, w).con_real, 0.0);
}

}  // namespace
