#pragma once

#include <array>
#include <string>
#include <vector>

#include "dforge/autograd.hpp"

namespace dforge::net {

// Ordered, hierarchically named parameter collection ("enc1.conv0.w").
template <typename T>
class ParameterStore {
 public:
  // He-uniform initialisation from a per-name derived seed (fan_in == 0: zeros).
  Var<T> create(const std::string& name, Shape shape, int64_t fan_in, uint64_t model_seed,
                bool trainable = true);

  // Filled with `value` (normalisation gains and shifts).
  Var<T> create_filled(const std::string& name, Shape shape, T value, bool trainable = true);

  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, Var<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }

  int64_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

template <typename T>
struct Conv {
  Var<T> weight;
  Var<T> bias;
  int64_t stride = 1;
  int64_t pad = 0;

  static Conv make(ParameterStore<T>& store, const std::string& name, int64_t in, int64_t out,
                   int64_t kernel, int64_t stride, uint64_t seed, bool trainable = true);
  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  int64_t out_channels() const { return weight.dim(0); }
};

template <typename T>
struct Dense {
  Var<T> weight;
  Var<T> bias;

  static Dense make(ParameterStore<T>& store, const std::string& name, int64_t in, int64_t out,
                    uint64_t seed);
  Var<T> operator()(const Var<T>& x) const { return ag::linear(x, weight, bias); }
};

// Per-sample group normalisation with a per-channel affine; groups hold at
// least two channels when the channel count allows it.
template <typename T>
struct GroupNorm {
  Var<T> gain;
  Var<T> shift;
  int64_t groups = 1;

  static GroupNorm make(ParameterStore<T>& store, const std::string& name, int64_t channels,
                        bool trainable = true);
  Var<T> operator()(const Var<T>& x) const;
};

// Spatial cross-attention between two feature maps of equal spatial size:
// queries come from one map, keys and values from the other.
template <typename T>
struct CrossAttention {
  Conv<T> query;
  Conv<T> key;
  Conv<T> value;

  static CrossAttention make(ParameterStore<T>& store, const std::string& name, int64_t query_in,
                             int64_t kv_in, int64_t key_dim, int64_t value_dim, uint64_t seed);
  // Returns [B, value_dim, H, W].
  Var<T> operator()(const Var<T>& query_src, const Var<T>& kv_src) const;
};

// Per-image feature quadruple after fine-grained separation, before and
// after purification. Index 0/1 is identity branch 1/2.
template <typename T>
struct DisentangledBundle {
  std::array<Var<T>, 2> id_blend;  // encoder outputs
  std::array<Var<T>, 2> id_raw;
  std::array<Var<T>, 2> art_raw;
  std::array<Var<T>, 2> id_pure;
  std::array<Var<T>, 2> art_pure;
  std::array<Var<T>, 2> gate;  // undefined when purification is disabled
  Var<T> ID;
  Var<T> ART;

  bool separated() const { return id_raw[0].defined(); }
  bool purified() const { return gate[0].defined(); }
};

}  // namespace dforge::net
