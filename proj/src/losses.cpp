#include "dforge/losses.hpp"

#include <cmath>
#include <limits>

namespace dforge::losses {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda1", bce}, {"lambda2", rec}, {"lambda3", contrastive}, {"lambda4", info}};
  for (const auto& [key, v] : all)
    if (!(v >= 0) || !std::isfinite(v))
      throw InvalidArgument(std::string("train.") + key + " must be a finite non-negative number");
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"bce", bce},           {"rec_self", rec_self}, {"rec_cross", rec_cross},
          {"con_real", con_real}, {"con_fake", con_fake}, {"info", info},
          {"total", total}};
}

LossBreakdown LossBreakdown::from_json(const nlohmann::json& j) {
  LossBreakdown b;
  b.bce = j.at("bce").get<double>();
  b.rec_self = j.at("rec_self").get<double>();
  b.rec_cross = j.at("rec_cross").get<double>();
  b.con_real = j.at("con_real").get<double>();
  b.con_fake = j.at("con_fake").get<double>();
  b.info = j.at("info").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

template <typename T>
Var<T> bce_loss(const Var<T>& probs, const std::vector<T>& labels) {
  if (probs.value().rank() != 1 || probs.dim(0) != static_cast<int64_t>(labels.size()))
    throw InvalidArgument("bce_loss: " + std::to_string(labels.size()) + " labels for probs " +
                          shape_str(probs.shape()));
  const T eps = static_cast<T>(kProbClamp);
  auto p = ag::clamp(probs, eps, T(1) - eps);
  auto y = Var<T>::constant(Tensor<T>(probs.shape(), labels));
  auto ll = y * ag::log(p) + ag::one_minus(y) * ag::log(ag::one_minus(p));
  return ag::scale(ag::mean(ll), T(-1));
}

template <typename T>
Var<T> mae(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "reconstruction_loss");
  return ag::mean(ag::abs(a - b));
}

template <typename T>
std::pair<Var<T>, Var<T>> reconstruction_loss(const std::pair<Var<T>, Var<T>>& originals,
                                              const std::pair<Var<T>, Var<T>>& selfrec,
                                              const std::pair<Var<T>, Var<T>>& crossrec) {
  auto rs = mae(originals.first, selfrec.first) + mae(originals.second, selfrec.second);
  auto rc = mae(originals.first, crossrec.first) + mae(originals.second, crossrec.second);
  return {rs, rc};
}

template <typename T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "cosine");
  if (a.value().rank() != 2) throw InvalidArgument("cosine expects [B,C], got " + shape_str(a.shape()));
  auto dot = ag::sum_last(a * b);
  auto norms2 = ag::sum_last(ag::square(a)) * ag::sum_last(ag::square(b));
  const T floor2 = static_cast<T>(kCosineFloor * kCosineFloor);
  auto denom = ag::sqrt(ag::clamp(norms2, floor2, std::numeric_limits<T>::max()));
  return dot / denom;
}

template <typename T>
std::pair<Var<T>, Var<T>> separation_contrastive_loss(const net::DisentangledBundle<T>& real,
                                                      const net::DisentangledBundle<T>& fake) {
  if (!real.id_pure[0].defined() || !fake.id_pure[0].defined())
    throw InvalidArgument("separation_contrastive_loss needs pure features");
  Var<T> con_real, con_fake;
  for (int n = 0; n < 2; ++n) {
    auto cr = cosine_rows(ag::global_avg_pool(real.art_pure[n]), ag::global_avg_pool(real.id_pure[n]));
    auto cf = cosine_rows(ag::global_avg_pool(fake.art_pure[n]), ag::global_avg_pool(fake.id_pure[n]));
    auto tr = ag::one_minus(ag::mean(cr));
    auto tf = ag::mean(cf);
    con_real = n == 0 ? tr : con_real + tr;
    con_fake = n == 0 ? tf : con_fake + tf;
  }
  return {con_real, con_fake};
}

LossBreakdown total_loss(LossBreakdown p, const LossWeights& w, long step) {
  const std::pair<const char*, double> parts[] = {{"bce", p.bce},           {"rec_self", p.rec_self},
                                                  {"rec_cross", p.rec_cross}, {"con_real", p.con_real},
                                                  {"con_fake", p.con_fake}, {"info", p.info}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v))
      throw TrainingFault(name, step,
                          std::string("non-finite ") + name + " loss" +
                              (step >= 0 ? " at step " + std::to_string(step) : std::string()));
  p.total = w.bce * p.bce + w.rec * (p.rec_self + p.rec_cross) +
            w.contrastive * (p.con_real + p.con_fake) + w.info * p.info;
  return p;
}

template <typename T>
Var<T> weighted_total(const LossTerms<T>& t, const LossWeights& w) {
  Var<T> total;
  auto add = [&](const Var<T>& term, double weight) {
    if (!term.defined()) return;
    auto scaled = ag::scale(term, static_cast<T>(weight));
    total = total.defined() ? total + scaled : scaled;
  };
  add(t.bce, w.bce);
  add(t.rec_self, w.rec);
  add(t.rec_cross, w.rec);
  add(t.con_real, w.contrastive);
  add(t.con_fake, w.contrastive);
  add(t.info, w.info);
  if (!total.defined()) throw InvalidArgument("weighted_total: no loss terms");
  return total;
}

template <typename T>
LossBreakdown breakdown_of(const LossTerms<T>& t, const LossWeights& w, long step) {
  auto v = [](const Var<T>& x) { return x.defined() ? static_cast<double>(x.item()) : 0.0; };
  LossBreakdown b;
  b.bce = v(t.bce);
  b.rec_self = v(t.rec_self);
  b.rec_cross = v(t.rec_cross);
  b.con_real = v(t.con_real);
  b.con_fake = v(t.con_fake);
  b.info = v(t.info);
  return total_loss(b, w, step);
}

#define DFORGE_LOSSES(T)                                                                     \
  template Var<T> bce_loss(const Var<T>&, const std::vector<T>&);                            \
  template Var<T> mae(const Var<T>&, const Var<T>&);                                         \
  template std::pair<Var<T>, Var<T>> reconstruction_loss(                                    \
      const std::pair<Var<T>, Var<T>>&, const std::pair<Var<T>, Var<T>>&,                    \
      const std::pair<Var<T>, Var<T>>&);                                                     \
  template Var<T> cosine_rows(const Var<T>&, const Var<T>&);                                 \
  template std::pair<Var<T>, Var<T>> separation_contrastive_loss(                            \
      const net::DisentangledBundle<T>&, const net::DisentangledBundle<T>&);                 \
  template Var<T> weighted_total(const LossTerms<T>&, const LossWeights&);                   \
  template LossBreakdown breakdown_of(const LossTerms<T>&, const LossWeights&, long);
DFORGE_LOSSES(float)
DFORGE_LOSSES(double)
#undef DFORGE_LOSSES

}  // namespace dforge::losses
