#include "dforge/iacc.hpp"

#include <limits>
#include <random>

#include "dforge/rng.hpp"

namespace dforge::iacc {

template <typename T>
GaussianStats<T> gaussian_stats(const Var<T>& feat) {
  if (feat.value().rank() != 4)
    throw InvalidArgument("gaussian_stats expects NCHW, got " + shape_str(feat.shape()));
  if (feat.dim(0) * feat.dim(2) * feat.dim(3) < 2)
    throw InvalidArgument("gaussian_stats needs at least two values per channel, got " +
                          shape_str(feat.shape()));
  auto mean = ag::channel_mean(feat);
  auto centered = feat - ag::broadcast_channel(mean, feat.shape());
  auto var = ag::clamp(ag::channel_mean(ag::square(centered)), static_cast<T>(kVarianceFloor),
                       std::numeric_limits<T>::max());
  return {mean, var};
}

template <typename T>
Var<T> kl_diag_gauss(const GaussianStats<T>& p, const GaussianStats<T>& q) {
  if (p.mean.shape() != q.mean.shape())
    throw InvalidArgument("kl_diag_gauss channel mismatch: " + shape_str(p.mean.shape()) + " vs " +
                          shape_str(q.mean.shape()));
  auto log_ratio = ag::log(q.var) - ag::log(p.var);
  auto diff = p.mean - q.mean;
  auto quad = (p.var + ag::square(diff)) / q.var;
  auto kl = ag::scale(log_ratio + quad, T(0.5)) + T(-0.5);
  return ag::mean(kl);
}

template <typename T>
Var<T> purify(const Var<T>& feat, const Var<T>& gate, uint64_t noise_seed, NoiseMode mode) {
  require_same_shape(feat.shape(), gate.shape(), "purify");
  auto stats = gaussian_stats(feat);
  auto eps = ag::broadcast_channel(stats.mean, feat.shape());
  if (mode == NoiseMode::sample) {
    Rng rng(noise_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<T> z(feat.shape());
    for (auto& v : z.vec()) v = static_cast<T>(normal(rng));
    auto sd = ag::broadcast_channel(ag::sqrt(stats.var), feat.shape());
    eps = eps + sd * Var<T>::constant(std::move(z));
  }
  return ag::one_minus(gate) * feat + gate * eps;
}

template <typename T>
Dcam<T> Dcam<T>::make(net::ParameterStore<T>& store, const std::string& name, int64_t channels,
                      uint64_t seed) {
  Dcam g;
  g.id_to_art = net::CrossAttention<T>::make(store, name + ".ia", channels, channels, channels,
                                             channels, seed);
  g.art_to_id = net::CrossAttention<T>::make(store, name + ".ai", channels, channels, channels,
                                             channels, seed);
  g.proj = net::Conv<T>::make(store, name + ".proj", channels, channels, 1, 1, seed);
  return g;
}

template <typename T>
Var<T> Dcam<T>::operator()(const Var<T>& id_raw, const Var<T>& art_raw) const {
  require_same_shape(id_raw.shape(), art_raw.shape(), "dcam_gate");
  auto fused = id_to_art(id_raw, art_raw) + art_to_id(art_raw, id_raw);
  return ag::sigmoid(proj(fused));
}

template <typename T>
InfoLossTerms<T> info_loss(const net::DisentangledBundle<T>& b) {
  if (!b.separated() || !b.id_pure[0].defined())
    throw InvalidArgument("info_loss needs raw and pure features for both branches");
  InfoLossTerms<T> t;
  for (int n = 0; n < 2; ++n) {
    auto art_raw = gaussian_stats(b.art_raw[n]);
    t.kl_id_art[n] = kl_diag_gauss(gaussian_stats(b.id_raw[n]), art_raw);
    t.kl_art_art[n] = kl_diag_gauss(gaussian_stats(b.art_pure[n]), art_raw);
  }
  const T hi = static_cast<T>(kKlClamp);
  auto s1 = ag::clamp(t.kl_id_art[0] + t.kl_id_art[1], T(0), hi);
  auto s2 = ag::clamp(t.kl_art_art[0] + t.kl_art_art[1], T(0), hi);
  t.total = ag::exp(ag::scale(s1, T(-1))) + ag::scale(ag::exp(s2), T(0.5));
  return t;
}

#define DFORGE_IACC(T)                                                                      \
  template GaussianStats<T> gaussian_stats(const Var<T>&);                                  \
  template Var<T> kl_diag_gauss(const GaussianStats<T>&, const GaussianStats<T>&);          \
  template Var<T> purify(const Var<T>&, const Var<T>&, uint64_t, NoiseMode);                \
  template struct Dcam<T>;                                                                  \
  template InfoLossTerms<T> info_loss(const net::DisentangledBundle<T>&);
DFORGE_IACC(float)
DFORGE_IACC(double)
#undef DFORGE_IACC

}  // namespace dforge::iacc
