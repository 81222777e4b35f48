#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dforge/layers.hpp"

namespace dforge::losses {

struct LossWeights {
  double bce = 5.0;         // lambda1
  double rec = 0.1;         // lambda2
  double contrastive = 0.5; // lambda3
  double info = 0.5;        // lambda4

  void validate() const;
};

struct LossBreakdown {
  double bce = 0, rec_self = 0, rec_cross = 0, con_real = 0, con_fake = 0, info = 0, total = 0;

  nlohmann::json to_json() const;
  static LossBreakdown from_json(const nlohmann::json& j);
  bool operator==(const LossBreakdown&) const = default;
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kCosineFloor = 1e-8;

// Mean binary cross-entropy; probs clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce_loss(const Var<T>& probs, const std::vector<T>& labels);

// Mean absolute error between two equally shaped image batches.
template <typename T>
Var<T> mae(const Var<T>& a, const Var<T>& b);

// (rec_self, rec_cross), each summed over the A and B images of the pair.
template <typename T>
std::pair<Var<T>, Var<T>> reconstruction_loss(const std::pair<Var<T>, Var<T>>& originals,
                                              const std::pair<Var<T>, Var<T>>& selfrec,
                                              const std::pair<Var<T>, Var<T>>& crossrec);

// Cosine similarity per row of [B,C] inputs -> [B].
template <typename T>
Var<T> cosine_rows(const Var<T>& a, const Var<T>& b);

// con_real = sum_n mean_b (1 - cos(art^n, id^n)) over the real bundle,
// con_fake = sum_n mean_b cos(art^n, id^n) over the fake bundle; features are
// spatially average-pooled first.
template <typename T>
std::pair<Var<T>, Var<T>> separation_contrastive_loss(const net::DisentangledBundle<T>& real,
                                                      const net::DisentangledBundle<T>& fake);

// Fills total; throws TrainingFault naming the first non-finite component.
LossBreakdown total_loss(LossBreakdown parts, const LossWeights& w, long step = -1);

// Differentiable weighted sum; undefined terms count as zero.
template <typename T>
struct LossTerms {
  Var<T> bce, rec_self, rec_cross, con_real, con_fake, info;
};

template <typename T>
Var<T> weighted_total(const LossTerms<T>& terms, const LossWeights& w);

template <typename T>
LossBreakdown breakdown_of(const LossTerms<T>& terms, const LossWeights& w, long step = -1);

}  // namespace dforge::losses
