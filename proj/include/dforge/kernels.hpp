#pragma once

// Dense compute kernels behind the autograd ops.
//
// Every kernel exists twice: `reference::` is a direct, single-threaded loop
// nest kept as the ground truth for tests and benchmarks; `parallel::` is the
// im2col + blocked GEMM path with OpenMP used by the model. Parallel kernels
// partition work over output elements only, so results do not depend on the
// thread count.

#include <cstdint>

namespace dforge::kernels {

struct ConvGeometry {
  int64_t batch = 1;
  int64_t in_channels = 1;
  int64_t in_h = 1;
  int64_t in_w = 1;
  int64_t out_channels = 1;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t pad = 1;

  int64_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int64_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  int64_t patch() const { return in_channels * kernel * kernel; }
};

namespace reference {

// C[M,N] = op(A) * op(B) (+ C when accumulate). op(A) is [M,K], op(B) is [K,N].
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate);

// y = conv(x, w) + bias; x [B,Cin,H,W], w [Cout,Cin,K,K], bias [Cout] or nullptr.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

// gx = dL/dx given gy = dL/dy (overwrites gx).
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx);

// gw = dL/dw, gbias = dL/dbias (overwrites; gbias may be nullptr).
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gbias);

}  // namespace reference

namespace parallel {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gbias);

}  // namespace parallel

int max_threads();

}  // namespace dforge::kernels
