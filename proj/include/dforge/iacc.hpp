#pragma once

// Identity-artifact correlation compression: a dual cross-attention gate,
// moment-matched noise mixing, and the exp-KL information loss.

#include <array>
#include <cstdint>

#include "dforge/layers.hpp"

namespace dforge::iacc {

inline constexpr double kVarianceFloor = 1e-6;
inline constexpr double kKlClamp = 20.0;

// Per-channel diagonal Gaussian; both members are [C].
template <typename T>
struct GaussianStats {
  Var<T> mean;
  Var<T> var;
};

// Population mean/variance over (batch, h, w); variance floored.
template <typename T>
GaussianStats<T> gaussian_stats(const Var<T>& feat);

// Mean over channels of KL(N(mu_p, var_p) || N(mu_q, var_q)).
template <typename T>
Var<T> kl_diag_gauss(const GaussianStats<T>& p, const GaussianStats<T>& q);

enum class NoiseMode { sample, mean };

// (1 - W) * feat + W * eps, eps ~ N(stats(feat)) per channel. Gradients flow
// through the statistics (eps = mean + sqrt(var) * z).
template <typename T>
Var<T> purify(const Var<T>& feat, const Var<T>& gate, uint64_t noise_seed, NoiseMode mode);

template <typename T>
struct Dcam {
  net::CrossAttention<T> id_to_art;  // queries from identity
  net::CrossAttention<T> art_to_id;  // queries from artifact
  net::Conv<T> proj;

  static Dcam make(net::ParameterStore<T>& store, const std::string& name, int64_t channels,
                   uint64_t seed);
  // Gate W in [0,1], same shape as the inputs.
  Var<T> operator()(const Var<T>& id_raw, const Var<T>& art_raw) const;
};

template <typename T>
struct InfoLossTerms {
  std::array<Var<T>, 2> kl_id_art;
  std::array<Var<T>, 2> kl_art_art;
  Var<T> total;
};

// exp(-clamp(sum_n KL(id_raw^n || art_raw^n)))
//   + 0.5 * exp(clamp(sum_n KL(art_pure^n || art_raw^n)))
template <typename T>
InfoLossTerms<T> info_loss(const net::DisentangledBundle<T>& bundle);

}  // namespace dforge::iacc
