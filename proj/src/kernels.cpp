#include "dforge/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dforge::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// reference
// ---------------------------------------------------------------------------

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T acc = T(0);
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ky = 0; ky < g.kernel; ++ky)
              for (int64_t kx = 0; kx < g.kernel; ++kx) {
                const int64_t iy = oy * g.stride - g.pad + ky;
                const int64_t ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] *
                       x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
          if (bias) acc += bias[co];
          y[((n * g.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  std::fill(gx, gx + g.batch * g.in_channels * g.in_h * g.in_w, T(0));
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T go = gy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ky = 0; ky < g.kernel; ++ky)
              for (int64_t kx = 0; kx < g.kernel; ++kx) {
                const int64_t iy = oy * g.stride - g.pad + ky;
                const int64_t ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                gx[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] +=
                    go * w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gbias) {
  const int64_t oh = g.out_h(), ow = g.out_w();
  std::fill(gw, gw + g.out_channels * g.patch(), T(0));
  if (gbias) std::fill(gbias, gbias + g.out_channels, T(0));
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T go = gy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          if (gbias) gbias[co] += go;
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ky = 0; ky < g.kernel; ++ky)
              for (int64_t kx = 0; kx < g.kernel; ++kx) {
                const int64_t iy = oy * g.stride - g.pad + ky;
                const int64_t ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                gw[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] +=
                    go * x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
        }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// parallel
// ---------------------------------------------------------------------------

namespace parallel {
namespace {

// Register tile: MR rows of C by NR columns, accumulated over the full K range.
template <typename T>
struct Tile {
  static constexpr int64_t MR = 4;
  static constexpr int64_t NR = 64 / sizeof(T) * 2;
};

// C[i0:i0+MR, j0:j0+NR] (+)= A[i0:, :] * B[:, j0:] for a full tile.
template <typename T>
inline void micro_tile(int64_t n, int64_t k, const T* a, const T* b, T* c, int64_t i0, int64_t j0,
                       bool accumulate) {
  constexpr int64_t MR = Tile<T>::MR, NR = Tile<T>::NR;
  T acc[MR][NR] = {};
  const T* a0 = a + i0 * k;
  for (int64_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (int64_t r = 0; r < MR; ++r) {
      const T av = a0[r * k + p];
#pragma omp simd
      for (int64_t j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (int64_t r = 0; r < MR; ++r) {
    T* crow = c + (i0 + r) * n + j0;
    if (accumulate) {
      for (int64_t j = 0; j < NR; ++j) crow[j] += acc[r][j];
    } else {
      for (int64_t j = 0; j < NR; ++j) crow[j] = acc[r][j];
    }
  }
}

// Ragged edge tile; same k-ascending accumulation as micro_tile.
template <typename T>
inline void edge_tile(int64_t n, int64_t k, const T* a, const T* b, T* c, int64_t i0, int64_t i1,
                      int64_t j0, int64_t j1, bool accumulate) {
  constexpr int64_t NR = Tile<T>::NR;
  for (int64_t i = i0; i < i1; ++i) {
    T acc[NR] = {};
    const int64_t w = j1 - j0;
    for (int64_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n + j0;
      for (int64_t j = 0; j < w; ++j) acc[j] += av * brow[j];
    }
    T* crow = c + i * n + j0;
    for (int64_t j = 0; j < w; ++j) crow[j] = accumulate ? crow[j] + acc[j] : acc[j];
  }
}

template <typename T>
void gemm_nn_tiles(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c, bool accumulate,
                   bool threaded) {
  constexpr int64_t MR = Tile<T>::MR, NR = Tile<T>::NR;
  const int64_t row_tiles = (m + MR - 1) / MR;
  const int64_t col_tiles = (n + NR - 1) / NR;
  const int64_t tiles = row_tiles * col_tiles;
#pragma omp parallel for schedule(static) if (threaded && tiles > 8)
  for (int64_t t = 0; t < tiles; ++t) {
    const int64_t i0 = (t / col_tiles) * MR;
    const int64_t j0 = (t % col_tiles) * NR;
    const int64_t i1 = std::min(m, i0 + MR);
    const int64_t j1 = std::min(n, j0 + NR);
    if (i1 - i0 == MR && j1 - j0 == NR) {
      micro_tile(n, k, a, b, c, i0, j0, accumulate);
    } else {
      edge_tile(n, k, a, b, c, i0, i1, j0, j1, accumulate);
    }
  }
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst) {
  constexpr int64_t blk = 32;
  for (int64_t r0 = 0; r0 < rows; r0 += blk)
    for (int64_t c0 = 0; c0 < cols; c0 += blk) {
      const int64_t r1 = std::min(rows, r0 + blk), c1 = std::min(cols, c0 + blk);
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T: every entry is a dot product of two
// contiguous rows, accumulated in fixed-width lanes over 4x4 blocks.
template <typename T>
void gemm_nt_dot(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c, bool accumulate,
                 bool threaded) {
  constexpr int64_t B = 4, V = 64 / sizeof(T);
  const int64_t row_blocks = (m + B - 1) / B, col_blocks = (n + B - 1) / B;
  const int64_t kv = k - k % V;
#pragma omp parallel for schedule(static) if (threaded && row_blocks * col_blocks > 8)
  for (int64_t t = 0; t < row_blocks * col_blocks; ++t) {
    const int64_t i0 = (t / col_blocks) * B, j0 = (t % col_blocks) * B;
    const int64_t rows = std::min(B, m - i0), cols = std::min(B, n - j0);
    T acc[B][B][V] = {};
    if (rows == B && cols == B) {
      using Vec [[gnu::vector_size(64)]] = T;
      Vec va[B], vb[B], vacc[B][B] = {};
      for (int64_t p = 0; p < kv; p += V) {
        for (int64_t r = 0; r < B; ++r) std::memcpy(&va[r], a + (i0 + r) * k + p, sizeof(Vec));
        for (int64_t q = 0; q < B; ++q) std::memcpy(&vb[q], b + (j0 + q) * k + p, sizeof(Vec));
        for (int64_t r = 0; r < B; ++r)
          for (int64_t q = 0; q < B; ++q) vacc[r][q] += va[r] * vb[q];
      }
      for (int64_t r = 0; r < B; ++r)
        for (int64_t q = 0; q < B; ++q) std::memcpy(acc[r][q], &vacc[r][q], sizeof(Vec));
    } else {
      for (int64_t p = 0; p < kv; p += V)
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t q = 0; q < cols; ++q)
            for (int64_t l = 0; l < V; ++l)
              acc[r][q][l] += a[(i0 + r) * k + p + l] * b[(j0 + q) * k + p + l];
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t q = 0; q < cols; ++q) {
        T s = T(0);
        for (int64_t l = 0; l < V; ++l) s += acc[r][q][l];
        for (int64_t p = kv; p < k; ++p) s += a[(i0 + r) * k + p] * b[(j0 + q) * k + p];
        T& out = c[(i0 + r) * n + j0 + q];
        out = accumulate ? out + s : s;
      }
  }
}

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a,
               const T* b, T* c, bool accumulate, bool threaded) {
  if (trans_b && !trans_a) {
    gemm_nt_dot(m, n, k, a, b, c, accumulate, threaded);
    return;
  }
  std::vector<T> at, bt;
  if (trans_a) {
    at.resize(static_cast<size_t>(m * k));
    transpose(k, m, a, at.data());
    a = at.data();
  }
  if (trans_b) {
    bt.resize(static_cast<size_t>(k * n));
    transpose(n, k, b, bt.data());
    b = bt.data();
  }
  gemm_nn_tiles(m, n, k, a, b, c, accumulate, threaded);
}

// Output columns ox whose input column ox * stride - pad + kx lies inside the image.
inline std::pair<int64_t, int64_t> valid_columns(const ConvGeometry& g, int64_t kx) {
  const int64_t ow = g.out_w();
  const int64_t first = g.pad - kx;                // smallest ox * stride allowed
  const int64_t last = g.in_w - 1 + g.pad - kx;    // largest ox * stride allowed
  int64_t lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  int64_t hi = last < 0 ? 0 : last / g.stride + 1;
  lo = std::min(lo, ow);
  hi = std::clamp(hi, lo, ow);
  return {lo, hi};
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const int64_t oh = g.out_h(), ow = g.out_w(), s = g.stride;
  for (int64_t ci = 0; ci < g.in_channels; ++ci)
    for (int64_t ky = 0; ky < g.kernel; ++ky)
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * oh * ow;
        const T* plane = x + ci * g.in_h * g.in_w;
        const auto [lo, hi] = valid_columns(g, kx);
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * s - g.pad + ky;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(out, out + ow, T(0));
            continue;
          }
          std::fill(out, out + lo, T(0));
          const T* src = plane + iy * g.in_w + kx - g.pad;
          if (s == 1) {
            std::copy(src + lo, src + hi, out + lo);
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) out[ox] = src[ox * s];
          }
          std::fill(out + hi, out + ow, T(0));
        }
      }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* x) {
  const int64_t oh = g.out_h(), ow = g.out_w(), s = g.stride;
  std::fill(x, x + g.in_channels * g.in_h * g.in_w, T(0));
  for (int64_t ci = 0; ci < g.in_channels; ++ci)
    for (int64_t ky = 0; ky < g.kernel; ++ky)
      for (int64_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((ci * g.kernel + ky) * g.kernel + kx) * oh * ow;
        T* plane = x + ci * g.in_h * g.in_w;
        const auto [lo, hi] = valid_columns(g, kx);
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * s - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          T* dst = plane + iy * g.in_w + kx - g.pad;
          const T* src = row + oy * ow;
          if (s == 1) {
#pragma omp simd
            for (int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  gemm_impl(trans_a, trans_b, m, n, k, a, b, c, accumulate, true);
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const int64_t plane = g.out_h() * g.out_w();
  const int64_t in_size = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : static_cast<size_t>(g.patch() * plane));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
      const T* src = x + n * in_size;
      if (!pointwise) {
        im2col(g, src, col.data());
        src = col.data();
      }
      T* out = y + n * g.out_channels * plane;
      gemm_nn_tiles(g.out_channels, plane, g.patch(), w, src, out, false, false);
      if (bias) {
        for (int64_t co = 0; co < g.out_channels; ++co) {
          T* row = out + co * plane;
          for (int64_t p = 0; p < plane; ++p) row[p] += bias[co];
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx) {
  const int64_t plane = g.out_h() * g.out_w();
  const int64_t in_size = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> wt(static_cast<size_t>(g.out_channels * g.patch()));
  transpose(g.out_channels, g.patch(), w, wt.data());
#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : static_cast<size_t>(g.patch() * plane));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
      const T* grad_out = gy + n * g.out_channels * plane;
      if (pointwise) {
        gemm_nn_tiles(g.patch(), plane, g.out_channels, wt.data(), grad_out, gx + n * in_size,
                      false, false);
      } else {
        gemm_nn_tiles(g.patch(), plane, g.out_channels, wt.data(), grad_out, col.data(), false,
                      false);
        col2im(g, col.data(), gx + n * in_size);
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gbias) {
  const int64_t plane = g.out_h() * g.out_w();
  const int64_t in_size = g.in_channels * g.in_h * g.in_w;
  const int64_t wsize = g.out_channels * g.patch();
  const bool pointwise = is_pointwise(g);
  // Dot-product form when the reduction (spatial) axis is long; otherwise a
  // transposed copy feeds the tiled kernel.
  const bool long_rows = plane >= 4 * g.patch();
  // Per-sample partials, reduced afterwards in sample order.
  std::vector<T> partial(static_cast<size_t>(g.batch * wsize));
#pragma omp parallel
  {
    std::vector<T> col(pointwise ? 0 : static_cast<size_t>(g.patch() * plane));
    std::vector<T> colt(long_rows ? 0 : static_cast<size_t>(g.patch() * plane));
#pragma omp for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
      const T* src = x + n * in_size;
      if (!pointwise) {
        im2col(g, src, col.data());
        src = col.data();
      }
      const T* grad_out = gy + n * g.out_channels * plane;
      if (long_rows) {
        gemm_nt_dot(g.out_channels, g.patch(), plane, grad_out, src, partial.data() + n * wsize,
                    false, false);
      } else {
        transpose(g.patch(), plane, src, colt.data());
        gemm_nn_tiles(g.out_channels, g.patch(), plane, grad_out, colt.data(),
                      partial.data() + n * wsize, false, false);
      }
    }
  }
  std::fill(gw, gw + wsize, T(0));
  for (int64_t n = 0; n < g.batch; ++n) {
    const T* p = partial.data() + n * wsize;
    for (int64_t i = 0; i < wsize; ++i) gw[i] += p[i];
  }
  if (gbias) {
    for (int64_t co = 0; co < g.out_channels; ++co) {
      T acc = T(0);
      for (int64_t n = 0; n < g.batch; ++n) {
        const T* row = gy + (n * g.out_channels + co) * plane;
        for (int64_t p = 0; p < plane; ++p) acc += row[p];
      }
      gbias[co] = acc;
    }
  }
}

}  // namespace parallel

#define DFORGE_INSTANTIATE_KERNELS(NS, T)                                                      \
  template void NS::gemm<T>(bool, bool, int64_t, int64_t, int64_t, const T*, const T*, T*,    \
                            bool);                                                              \
  template void NS::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*); \
  template void NS::conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);    \
  template void NS::conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);

DFORGE_INSTANTIATE_KERNELS(reference, float)
DFORGE_INSTANTIATE_KERNELS(reference, double)
DFORGE_INSTANTIATE_KERNELS(parallel, float)
DFORGE_INSTANTIATE_KERNELS(parallel, double)

#undef DFORGE_INSTANTIATE_KERNELS

}  // namespace dforge::kernels
