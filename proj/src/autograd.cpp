#include "dforge/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "dforge/kernels.hpp"

namespace dforge {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                          shape_str(b));
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1)
    throw InvalidArgument("backward() needs a scalar, got " + shape_str(shape()));
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace ag {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Wraps a forward result; records parents and the backward closure only when
// some parent needs a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(node);
}

template <typename T>
bool wants(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  const int64_t n = xv.numel();
  const T* xs = xv.data();
  T* ys = out.data();
  for (int64_t i = 0; i < n; ++i) ys[i] = f(xs[i]);
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, df](Node<T>& self) {
    Tensor<T>& gx = xn->ensure_grad();
    const T* xs = xn->value.data();
    const T* ys = self.value.data();
    const T* g = self.grad.data();
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * df(xs[i], ys[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      Tensor<T>& g = n->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (wants(an)) {
      Tensor<T>& g = an->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (wants(bn)) {
      Tensor<T>& g = bn->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (wants(an)) {
      Tensor<T>& g = an->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (wants(bn)) {
      Tensor<T>& g = bn->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (wants(an)) {
      Tensor<T>& g = an->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / bn->value[i];
    }
    if (wants(bn)) {
      Tensor<T>& g = bn->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i] * self.value[i] / bn->value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> one_minus(const Var<T>& a) {
  return unary(a, [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sqrt(const Var<T>& x) {
  return unary(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.value()[i];
  NodePtr<T> xn = x.node();
  return make_result<T>(Tensor<T>::scalar(acc), {x}, [xn](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    const T go = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Var<T> sum_last(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw InvalidArgument("sum_last on a scalar");
  const int64_t inner = s.back();
  const int64_t outer = x.numel() / inner;
  Shape os(s.begin(), s.end() - 1);
  Tensor<T> out(os);
  for (int64_t o = 0; o < outer; ++o) {
    T acc = T(0);
    for (int64_t i = 0; i < inner; ++i) acc += x.value()[o * inner + i];
    out[o] = acc;
  }
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, outer, inner](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[o];
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  if (x.value().rank() != 4) throw InvalidArgument("global_avg_pool expects NCHW");
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{b, c});
  const T inv = T(1) / static_cast<T>(hw);
  for (int64_t i = 0; i < b * c; ++i) {
    T acc = T(0);
    const T* p = x.value().data() + i * hw;
    for (int64_t k = 0; k < hw; ++k) acc += p[k];
    out[i] = acc * inv;
  }
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, b, c, hw, inv](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t i = 0; i < b * c; ++i) {
      const T go = self.grad[i] * inv;
      T* p = g.data() + i * hw;
      for (int64_t k = 0; k < hw; ++k) p[k] += go;
    }
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  if (x.value().rank() != 4) throw InvalidArgument("channel_mean expects NCHW");
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(b * hw);
  Tensor<T> out(Shape{c});
  for (int64_t ch = 0; ch < c; ++ch) {
    T acc = T(0);
    for (int64_t n = 0; n < b; ++n) {
      const T* p = x.value().data() + (n * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) acc += p[k];
    }
    out[ch] = acc * inv;
  }
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, b, c, hw, inv](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t n = 0; n < b; ++n)
      for (int64_t ch = 0; ch < c; ++ch) {
        const T go = self.grad[ch] * inv;
        T* p = g.data() + (n * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) p[k] += go;
      }
  });
}

template <typename T>
Var<T> broadcast_channel(const Var<T>& v, const Shape& shape) {
  if (v.value().rank() != 1 || shape.size() != 4 || shape[1] != v.dim(0))
    throw InvalidArgument("broadcast_channel: " + shape_str(v.shape()) + " -> " +
                          shape_str(shape));
  const int64_t b = shape[0], c = shape[1], hw = shape[2] * shape[3];
  Tensor<T> out(shape);
  for (int64_t n = 0; n < b; ++n)
    for (int64_t ch = 0; ch < c; ++ch) {
      T* p = out.data() + (n * c + ch) * hw;
      std::fill(p, p + hw, v.value()[ch]);
    }
  NodePtr<T> vn = v.node();
  return make_result<T>(std::move(out), {v}, [vn, b, c, hw](Node<T>& self) {
    Tensor<T>& g = vn->ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (int64_t n = 0; n < b; ++n) {
        const T* p = self.grad.data() + (n * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) acc += p[k];
      }
      g[ch] += acc;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int64_t axis) {
  if (parts.empty()) throw InvalidArgument("concat of nothing");
  const Shape& s0 = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s0.size()))
    throw InvalidArgument("concat axis out of range");
  Shape os = s0;
  os[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != s0.size()) throw InvalidArgument("concat rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int64_t>(i) != axis && s[i] != s0[i])
        throw InvalidArgument("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    os[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];
  const int64_t out_row = os[static_cast<size_t>(axis)] * inner;
  Tensor<T> out(os);
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t row = p.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * row, row, out.data() + o * out_row + off);
    offsets.push_back(off);
    off += row;
  }
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<T>(std::move(out), parts,
                        [nodes, offsets, outer, inner, out_row, axis](Node<T>& self) {
                          for (size_t k = 0; k < nodes.size(); ++k) {
                            if (!wants(nodes[k])) continue;
                            Tensor<T>& g = nodes[k]->ensure_grad();
                            const int64_t row = nodes[k]->value.dim(axis) * inner;
                            for (int64_t o = 0; o < outer; ++o) {
                              const T* src = self.grad.data() + o * out_row + offsets[k];
                              T* dst = g.data() + o * row;
                              for (int64_t i = 0; i < row; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> slice(const Var<T>& x, int64_t axis, int64_t begin, int64_t end) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()) || begin < 0 || end > x.dim(axis) ||
      begin >= end)
    throw InvalidArgument("slice out of range on " + shape_str(s));
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[static_cast<size_t>(axis)] = end - begin;
  const int64_t in_row = x.dim(axis) * inner;
  const int64_t out_row = (end - begin) * inner;
  const int64_t off = begin * inner;
  Tensor<T> out(os);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.value().data() + o * in_row + off, out_row, out.data() + o * out_row);
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, outer, in_row, out_row, off](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = self.grad.data() + o * out_row;
      T* dst = g.data() + o * in_row + off;
      for (int64_t i = 0; i < out_row; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  if (x.value().rank() != 4) throw InvalidArgument("upsample2x expects NCHW");
  const int64_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (int64_t p = 0; p < bc; ++p) {
    const T* src = x.value().data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, bc, h, w](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t p = 0; p < bc; ++p) {
      const T* src = self.grad.data() + p * 4 * h * w;
      T* dst = g.data() + p * h * w;
      for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad) {
  if (x.value().rank() != 4 || w.value().rank() != 4)
    throw InvalidArgument("conv2d expects NCHW input and OIHW weight");
  if (x.dim(1) != w.dim(1))
    throw InvalidArgument("conv2d: input has " + std::to_string(x.dim(1)) +
                          " channels, weight expects " + std::to_string(w.dim(1)));
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::parallel::conv2d_forward(g, x.value().data(), w.value().data(),
                                    bias.defined() ? bias.value().data() : nullptr, out.data());
  NodePtr<T> xn = x.node(), wn = w.node();
  NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), parents, [xn, wn, bn, g](Node<T>& self) {
    if (wants(xn)) {
      Tensor<T> gx(xn->value.shape());
      kernels::parallel::conv2d_backward_input(g, wn->value.data(), self.grad.data(), gx.data());
      Tensor<T>& acc = xn->ensure_grad();
      for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gx[i];
    }
    if (wants(wn) || wants(bn)) {
      Tensor<T> gw(wn->value.shape());
      Tensor<T> gb(Shape{g.out_channels});
      kernels::parallel::conv2d_backward_weight(g, xn->value.data(), self.grad.data(), gw.data(),
                                                gb.data());
      if (wants(wn)) {
        Tensor<T>& acc = wn->ensure_grad();
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gw[i];
      }
      if (wants(bn)) {
        Tensor<T>& acc = bn->ensure_grad();
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += gb[i];
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  if (x.value().rank() != 2 || w.value().rank() != 2 || x.dim(1) != w.dim(1))
    throw InvalidArgument("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const int64_t b = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  Tensor<T> out(Shape{b, out_f});
  kernels::parallel::gemm(false, true, b, out_f, in, x.value().data(), w.value().data(),
                          out.data(), false);
  if (bias.defined())
    for (int64_t i = 0; i < b; ++i)
      for (int64_t o = 0; o < out_f; ++o) out[i * out_f + o] += bias.value()[o];
  NodePtr<T> xn = x.node(), wn = w.node();
  NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), parents, [xn, wn, bn, b, in, out_f](Node<T>& self) {
    if (wants(xn))
      kernels::parallel::gemm(false, false, b, in, out_f, self.grad.data(), wn->value.data(),
                              xn->ensure_grad().data(), true);
    if (wants(wn))
      kernels::parallel::gemm(true, false, out_f, in, b, self.grad.data(), xn->value.data(),
                              wn->ensure_grad().data(), true);
    if (wants(bn)) {
      Tensor<T>& g = bn->ensure_grad();
      for (int64_t i = 0; i < b; ++i)
        for (int64_t o = 0; o < out_f; ++o) g[o] += self.grad[i * out_f + o];
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.dim(0) != b.dim(0))
    throw InvalidArgument("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t batch = a.dim(0);
  const int64_t m = trans_a ? a.dim(2) : a.dim(1);
  const int64_t k = trans_a ? a.dim(1) : a.dim(2);
  const int64_t kb = trans_b ? b.dim(2) : b.dim(1);
  const int64_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb)
    throw InvalidArgument("bmm inner dims: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{batch, m, n});
  for (int64_t i = 0; i < batch; ++i)
    kernels::parallel::gemm(trans_a, trans_b, m, n, k, a.value().data() + i * m * k,
                            b.value().data() + i * k * n, out.data() + i * m * n, false);
  NodePtr<T> an = a.node(), bn = b.node();
  return make_result<T>(std::move(out), {a, b},
                        [an, bn, batch, m, n, k, trans_a, trans_b](Node<T>& self) {
                          for (int64_t i = 0; i < batch; ++i) {
                            const T* go = self.grad.data() + i * m * n;
                            const T* av = an->value.data() + i * m * k;
                            const T* bv = bn->value.data() + i * k * n;
                            if (wants(an)) {
                              T* ga = an->ensure_grad().data() + i * m * k;
                              // dA = G B^T  (or its transpose when A was transposed)
                              if (!trans_a)
                                kernels::parallel::gemm(false, !trans_b, m, k, n, go, bv, ga, true);
                              else
                                kernels::parallel::gemm(trans_b, true, k, m, n, bv, go, ga, true);
                            }
                            if (wants(bn)) {
                              T* gb = bn->ensure_grad().data() + i * k * n;
                              // dB = A^T G  (or its transpose when B was transposed)
                              if (!trans_b)
                                kernels::parallel::gemm(!trans_a, false, k, n, m, av, go, gb, true);
                              else
                                kernels::parallel::gemm(true, trans_a, n, k, m, go, av, gb, true);
                            }
                          }
                        });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  const int64_t inner = x.shape().back();
  const int64_t outer = x.numel() / inner;
  Tensor<T> out(x.shape());
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.value().data() + o * inner;
    T* dst = out.data() + o * inner;
    const T mx = *std::max_element(src, src + inner);
    T z = T(0);
    for (int64_t i = 0; i < inner; ++i) z += (dst[i] = std::exp(src[i] - mx));
    for (int64_t i = 0; i < inner; ++i) dst[i] /= z;
  }
  NodePtr<T> xn = x.node();
  return make_result<T>(std::move(out), {x}, [xn, outer, inner](Node<T>& self) {
    Tensor<T>& g = xn->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      const T* y = self.value.data() + o * inner;
      const T* gy = self.grad.data() + o * inner;
      T dot = T(0);
      for (int64_t i = 0; i < inner; ++i) dot += gy[i] * y[i];
      T* gx = g.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) gx[i] += y[i] * (gy[i] - dot);
    }
  });
}

#define DFORGE_INSTANTIATE_OPS(T)                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                      \
  template Var<T> div(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale(const Var<T>&, T);                                                \
  template Var<T> add_scalar(const Var<T>&, T);                                           \
  template Var<T> one_minus(const Var<T>&);                                               \
  template Var<T> silu(const Var<T>&);                                                    \
  template Var<T> sigmoid(const Var<T>&);                                                 \
  template Var<T> exp(const Var<T>&);                                                     \
  template Var<T> log(const Var<T>&);                                                     \
  template Var<T> sqrt(const Var<T>&);                                                    \
  template Var<T> abs(const Var<T>&);                                                     \
  template Var<T> square(const Var<T>&);                                                  \
  template Var<T> clamp(const Var<T>&, T, T);                                             \
  template Var<T> sum(const Var<T>&);                                                     \
  template Var<T> mean(const Var<T>&);                                                    \
  template Var<T> sum_last(const Var<T>&);                                                \
  template Var<T> global_avg_pool(const Var<T>&);                                         \
  template Var<T> channel_mean(const Var<T>&);                                            \
  template Var<T> broadcast_channel(const Var<T>&, const Shape&);                         \
  template Var<T> reshape(const Var<T>&, Shape);                                          \
  template Var<T> concat(const std::vector<Var<T>>&, int64_t);                            \
  template Var<T> slice(const Var<T>&, int64_t, int64_t, int64_t);                        \
  template Var<T> upsample2x(const Var<T>&);                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int64_t, int64_t);  \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool, bool);                          \
  template Var<T> softmax_last(const Var<T>&);

DFORGE_INSTANTIATE_OPS(float)
DFORGE_INSTANTIATE_OPS(double)

#undef DFORGE_INSTANTIATE_OPS

}  // namespace ag

template class Var<float>;
template class Var<double>;

}  // namespace dforge
