#include "dforge/layers.hpp"

#include <algorithm>
#include <cmath>

#include "dforge/rng.hpp"

namespace dforge::net {

namespace {
constexpr double kEps = 1e-5;
}

template <typename T>
Var<T> ParameterStore<T>::create(const std::string& name, Shape shape, int64_t fan_in,
                                 uint64_t model_seed, bool trainable) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  Tensor<T> init(std::move(shape));
  if (fan_in > 0) {
    Rng rng(derive_seed(model_seed, name));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : init.vec()) v = static_cast<T>(dist(rng));
  }
  Var<T> var(std::move(init), trainable);
  entries_.emplace_back(name, var);
  return var;
}

template <typename T>
Var<T> ParameterStore<T>::create_filled(const std::string& name, Shape shape, T value,
                                        bool trainable) {
  if (contains(name)) throw InvalidArgument("duplicate parameter " + name);
  Var<T> var(Tensor<T>(std::move(shape), value), trainable);
  entries_.emplace_back(name, var);
  return var;
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw InvalidArgument("unknown parameter " + name);
}

template <typename T>
Var<T>& ParameterStore<T>::get(const std::string& name) {
  for (auto& [n, v] : entries_)
    if (n == name) return v;
  throw InvalidArgument("unknown parameter " + name);
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

template <typename T>
int64_t ParameterStore<T>::scalar_count() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
Conv<T> Conv<T>::make(ParameterStore<T>& store, const std::string& name, int64_t in, int64_t out,
                      int64_t kernel, int64_t stride, uint64_t seed, bool trainable) {
  const int64_t fan_in = in * kernel * kernel;
  Conv c;
  c.weight = store.create(name + ".w", Shape{out, in, kernel, kernel}, fan_in, seed, trainable);
  c.bias = store.create(name + ".b", Shape{out}, 0, seed, trainable);
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

template <typename T>
Dense<T> Dense<T>::make(ParameterStore<T>& store, const std::string& name, int64_t in, int64_t out,
                        uint64_t seed) {
  Dense d;
  d.weight = store.create(name + ".w", Shape{out, in}, in, seed);
  d.bias = store.create(name + ".b", Shape{out}, 0, seed);
  return d;
}

template <typename T>
GroupNorm<T> GroupNorm<T>::make(ParameterStore<T>& store, const std::string& name, int64_t channels,
                                bool trainable) {
  GroupNorm g;
  g.gain = store.create_filled(name + ".gain", Shape{channels}, T(1), trainable);
  g.shift = store.create_filled(name + ".shift", Shape{channels}, T(0), trainable);
  g.groups = 1;
  for (int64_t k = std::min<int64_t>(8, channels / 2); k > 1; --k)
    if (channels % k == 0) {
      g.groups = k;
      break;
    }
  return g;
}

template <typename T>
Var<T> GroupNorm<T>::operator()(const Var<T>& x) const {
  if (x.value().rank() != 4 || x.dim(1) != gain.dim(0))
    throw InvalidArgument("group norm over " + std::to_string(gain.dim(0)) + " channels got " +
                          shape_str(x.shape()));
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  // Each (sample, group) becomes one "channel" of a [1, B*G, C/G*H*W, 1] view.
  const Shape view{1, b * groups, c / groups * hw, 1};
  auto xr = ag::reshape(x, view);
  auto centered = xr - ag::broadcast_channel(ag::channel_mean(xr), view);
  auto var = ag::channel_mean(ag::square(centered));
  auto inv = ag::div(Var<T>::constant(Tensor<T>(var.shape(), T(1))),
                     ag::sqrt(ag::add_scalar(var, static_cast<T>(kEps))));
  auto normed = ag::reshape(centered * ag::broadcast_channel(inv, view), x.shape());
  return normed * ag::broadcast_channel(gain, x.shape()) + ag::broadcast_channel(shift, x.shape());
}

template <typename T>
CrossAttention<T> CrossAttention<T>::make(ParameterStore<T>& store, const std::string& name,
                                          int64_t query_in, int64_t kv_in, int64_t key_dim,
                                          int64_t value_dim, uint64_t seed) {
  CrossAttention a;
  a.query = Conv<T>::make(store, name + ".q", query_in, key_dim, 1, 1, seed);
  a.key = Conv<T>::make(store, name + ".k", kv_in, key_dim, 1, 1, seed);
  a.value = Conv<T>::make(store, name + ".v", kv_in, value_dim, 1, 1, seed);
  return a;
}

template <typename T>
Var<T> CrossAttention<T>::operator()(const Var<T>& query_src, const Var<T>& kv_src) const {
  if (query_src.dim(0) != kv_src.dim(0) || query_src.dim(2) != kv_src.dim(2) ||
      query_src.dim(3) != kv_src.dim(3))
    throw InvalidArgument("cross-attention inputs differ in batch or spatial size: " +
                          shape_str(query_src.shape()) + " vs " + shape_str(kv_src.shape()));
  const int64_t b = query_src.dim(0), h = query_src.dim(2), w = query_src.dim(3);
  const int64_t n = h * w;
  const int64_t kd = query.out_channels(), vd = value.out_channels();
  auto q = ag::reshape(query(query_src), Shape{b, kd, n});
  auto k = ag::reshape(key(kv_src), Shape{b, kd, n});
  auto v = ag::reshape(value(kv_src), Shape{b, vd, n});
  // scores[i, j] = <q_i, k_j> / sqrt(kd); rows index query positions.
  auto scores = ag::scale(ag::bmm(q, k, true, false), T(1) / std::sqrt(static_cast<T>(kd)));
  auto attn = ag::softmax_last(scores);
  auto out = ag::bmm(v, attn, false, true);  // [B, vd, N]
  return ag::reshape(out, Shape{b, vd, h, w});
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;
template struct Dense<float>;
template struct Dense<double>;
template struct CrossAttention<float>;
template struct CrossAttention<double>;

}  // namespace dforge::net
