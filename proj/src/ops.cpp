#include "wtpose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#ifdef WTPOSE_HAVE_CBLAS
#include <cblas.h>
#endif

namespace wtpose::ops {
namespace {

struct ConvGeom {
  std::int64_t n, c, h, w;
  std::int64_t o, kh, kw;
  std::int64_t oh, ow;
  int stride, padding;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
  std::int64_t taps() const { return c * kh * kw; }
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " does not match input " + to_string(x.shape()));
  }
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw ConfigError("conv2d: kernel extents must be odd, got " + to_string(w.shape()));
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, stride, padding};
  g.oh = conv_out_extent(g.h, static_cast<int>(g.kh), stride, padding);
  g.ow = conv_out_extent(g.w, static_cast<int>(g.kw), stride, padding);
  return g;
}

// out[o][p] += sum_k a[o][k] * b[k][p], summing k in ascending order.
// Tiles of 4 rows x kCols columns stay in registers across the k loop.
template <typename T>
void gemm_accumulate_loops(const T* a, std::int64_t rows, std::int64_t inner, const T* b, std::int64_t cols, T* out) {
  constexpr std::int64_t kCols = 256 / sizeof(T);
  std::int64_t o = 0;
  for (; o + 4 <= rows; o += 4) {
    const T* a0 = a + o * inner;
    const T* a1 = a0 + inner;
    const T* a2 = a1 + inner;
    const T* a3 = a2 + inner;
    std::int64_t p0 = 0;
    for (; p0 + kCols <= cols; p0 += kCols) {
      T acc[4][kCols];
      for (int r = 0; r < 4; ++r) {
        for (std::int64_t p = 0; p < kCols; ++p) acc[r][p] = out[(o + r) * cols + p0 + p];
      }
      for (std::int64_t k = 0; k < inner; ++k) {
        const T* __restrict brow = b + k * cols + p0;
        const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (std::int64_t p = 0; p < kCols; ++p) {
          const T bv = brow[p];
          acc[0][p] += v0 * bv;
          acc[1][p] += v1 * bv;
          acc[2][p] += v2 * bv;
          acc[3][p] += v3 * bv;
        }
      }
      for (int r = 0; r < 4; ++r) {
        for (std::int64_t p = 0; p < kCols; ++p) out[(o + r) * cols + p0 + p] = acc[r][p];
      }
    }
    if (p0 < cols) {
      T* r0 = out + o * cols;
      T* r1 = r0 + cols;
      T* r2 = r1 + cols;
      T* r3 = r2 + cols;
      for (std::int64_t k = 0; k < inner; ++k) {
        const T* __restrict brow = b + k * cols;
        const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
        for (std::int64_t p = p0; p < cols; ++p) {
          const T bv = brow[p];
          r0[p] += v0 * bv;
          r1[p] += v1 * bv;
          r2[p] += v2 * bv;
          r3[p] += v3 * bv;
        }
      }
    }
  }
  for (; o < rows; ++o) {
    T* r = out + o * cols;
    for (std::int64_t k = 0; k < inner; ++k) {
      const T av = a[o * inner + k];
      const T* __restrict brow = b + k * cols;
      for (std::int64_t p = 0; p < cols; ++p) r[p] += av * brow[p];
    }
  }
}

// out[rows x cols] += a[rows x inner] * b[inner x cols], all row-major.
template <typename T>
void gemm_accumulate(const T* a, std::int64_t rows, std::int64_t inner, const T* b, std::int64_t cols, T* out) {
#ifdef WTPOSE_HAVE_CBLAS
  const int m = static_cast<int>(rows), k = static_cast<int>(inner), n = static_cast<int>(cols);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a, k, b, n, 1.0f, out, n);
  } else {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a, k, b, n, 1.0, out, n);
  }
#else
  gemm_accumulate_loops(a, rows, inner, b, cols, out);
#endif
}

// col[(c, i, j)][(oh, ow)]; out-of-bounds taps are zero.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* dst = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + i;
          T* drow = dst + oh * g.ow;
          if (ih < 0 || ih >= g.h) {
            std::fill(drow, drow + g.ow, T(0));
            continue;
          }
          const T* srow = x + (c * g.h + ih) * g.w;
          for (std::int64_t ow = 0; ow < g.ow; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + j;
            drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* src = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oh = 0; oh < g.oh; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + i;
          if (ih < 0 || ih >= g.h) continue;
          T* xrow = x + (c * g.h + ih) * g.w;
          const T* srow = src + oh * g.ow;
          for (std::int64_t ow = 0; ow < g.ow; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + j;
            if (iw >= 0 && iw < g.w) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void transpose(const T* src, std::int64_t rows, std::int64_t cols, T* dst) {
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, int kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ConfigError("window of " + std::to_string(kernel) + " does not fit extent " + std::to_string(in) +
                      " with padding " + std::to_string(padding));
  }
  return span / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int padding) {
  const ConvGeom g = conv_geometry(x, w, stride, padding);
  if (static_cast<std::int64_t>(b.numel()) != g.o) {
    throw DimensionError("conv2d: bias has " + std::to_string(b.numel()) + " values for " + std::to_string(g.o) +
                         " output channels");
  }
  Tensor<T> out({g.n, g.o, g.oh, g.ow});
  const std::int64_t plane = g.oh * g.ow;
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.taps() * plane));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* xn = x.data() + n * g.c * g.h * g.w;
    const T* cols = xn;
    if (!g.pointwise()) {
      im2col(xn, g, col.data());
      cols = col.data();
    }
    T* on = out.data() + n * g.o * plane;
    gemm_accumulate(w.data(), g.o, g.taps(), cols, plane, on);
    for (std::int64_t o = 0; o < g.o; ++o) {
      const T bias = b[static_cast<std::size_t>(o)];
      T* row = on + o * plane;
      for (std::int64_t p = 0; p < plane; ++p) row[p] += bias;
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout, int stride, int padding,
                     std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const ConvGeom g = conv_geometry(x, w, stride, padding);
  const std::int64_t plane = g.oh * g.ow;
  const std::int64_t taps = g.taps();
  if (!gb.empty()) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t o = 0; o < g.o; ++o) {
        const T* row = gout.data() + (n * g.o + o) * plane;
        T acc = T(0);
        for (std::int64_t p = 0; p < plane; ++p) acc += row[p];
        gb[static_cast<std::size_t>(o)] += acc;
      }
    }
  }
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(taps * plane));
  std::vector<T> col_t(gw.empty() ? 0 : static_cast<std::size_t>(taps * plane));
  std::vector<T> w_t;
  if (!gx.empty()) {
    w_t.resize(w.numel());
    transpose(w.data(), g.o, taps, w_t.data());
  }
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* xn = x.data() + n * g.c * g.h * g.w;
    const T* gn = gout.data() + n * g.o * plane;
    if (!gw.empty()) {
      const T* cols = xn;
      if (!g.pointwise()) {
        im2col(xn, g, col.data());
        cols = col.data();
      }
      transpose(cols, taps, plane, col_t.data());
      gemm_accumulate(gn, g.o, plane, col_t.data(), taps, gw.data());
    }
    if (!gx.empty()) {
      T* gxn = gx.data() + n * g.c * g.h * g.w;
      if (g.pointwise()) {
        gemm_accumulate(w_t.data(), taps, g.o, gn, plane, gxn);
      } else {
        std::fill(col.begin(), col.end(), T(0));
        gemm_accumulate(w_t.data(), taps, g.o, gn, plane, col.data());
        col2im_accumulate(col.data(), g, gxn);
      }
    }
  }
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  double frac;
};

// Half-pixel source coordinate, clamped to the valid range.
std::vector<Tap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(s));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 4, "bilinear_upsample input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h < h || out_w < w) {
    throw ConfigError("bilinear_upsample: cannot downsample " + to_string(x.shape()) + " to " +
                      std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor<T> out({n, c, out_h, out_w});
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * h * w;
    T* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(b.frac);
        const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
        const T w10 = fy * (T(1) - fx), w11 = fy * fx;
        dst[oy * out_w + ox] = w00 * src[a.i0 * w + b.i0] + w01 * src[a.i0 * w + b.i1] +
                               w10 * src[a.i1 * w + b.i0] + w11 * src[a.i1 * w + b.i1];
      }
    }
  }
  return out;
}

template <typename T>
void bilinear_upsample_backward(const Shape& in_shape, std::span<const T> gout, std::int64_t out_h, std::int64_t out_w,
                                std::span<T> gx) {
  const std::int64_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* g = gout.data() + nc * out_h * out_w;
    T* dst = gx.data() + nc * h * w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(a.frac);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(b.frac);
        const T gv = g[oy * out_w + ox];
        dst[a.i0 * w + b.i0] += (T(1) - fy) * (T(1) - fx) * gv;
        dst[a.i0 * w + b.i1] += (T(1) - fy) * fx * gv;
        dst[a.i1 * w + b.i0] += fy * (T(1) - fx) * gv;
        dst[a.i1 * w + b.i1] += fy * fx * gv;
      }
    }
  }
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  require_rank(x, 4, "layer_norm input");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (static_cast<std::int64_t>(gamma.numel()) != c || static_cast<std::int64_t>(beta.numel()) != c) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(c) + " values");
  }
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  Tensor<T> out(x.shape());
  std::vector<T> mean(static_cast<std::size_t>(plane)), rstd(static_cast<std::size_t>(plane));
  const T inv_c = T(1) / static_cast<T>(c);
  for (std::int64_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * c * plane;
    T* ob = out.data() + b * c * plane;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(rstd.begin(), rstd.end(), T(0));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) mean[p] += row[p];
    }
    for (auto& m : mean) m *= inv_c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const T d = row[p] - mean[p];
        rstd[p] += d * d;
      }
    }
    for (auto& v : rstd) v = T(1) / std::sqrt(v * inv_c + static_cast<T>(eps));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      T* orow = ob + ch * plane;
      const T gm = gamma[static_cast<std::size_t>(ch)], bt = beta[static_cast<std::size_t>(ch)];
      for (std::int64_t p = 0; p < plane; ++p) orow[p] = (row[p] - mean[p]) * rstd[p] * gm + bt;
    }
  }
  return out;
}

template <typename T>
void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, std::span<const T> gout, double eps,
                         std::span<T> gx, std::span<T> ggamma, std::span<T> gbeta) {
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const T inv_c = T(1) / static_cast<T>(c);
  std::vector<T> mean(static_cast<std::size_t>(plane)), rstd(static_cast<std::size_t>(plane));
  std::vector<T> sum_g(static_cast<std::size_t>(plane)), sum_gx(static_cast<std::size_t>(plane));
  for (std::int64_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * c * plane;
    const T* gb = gout.data() + b * c * plane;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(rstd.begin(), rstd.end(), T(0));
    std::fill(sum_g.begin(), sum_g.end(), T(0));
    std::fill(sum_gx.begin(), sum_gx.end(), T(0));
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) mean[p] += row[p];
    }
    for (auto& m : mean) m *= inv_c;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const T d = row[p] - mean[p];
        rstd[p] += d * d;
      }
    }
    for (auto& v : rstd) v = T(1) / std::sqrt(v * inv_c + static_cast<T>(eps));
    // d(xhat) = g * gamma; accumulate its mean and its mean against xhat.
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      const T* grow = gb + ch * plane;
      const T gm = gamma[static_cast<std::size_t>(ch)];
      T acc_gamma = T(0), acc_beta = T(0);
      for (std::int64_t p = 0; p < plane; ++p) {
        const T xhat = (row[p] - mean[p]) * rstd[p];
        const T gh = grow[p] * gm;
        sum_g[p] += gh;
        sum_gx[p] += gh * xhat;
        acc_gamma += grow[p] * xhat;
        acc_beta += grow[p];
      }
      if (!ggamma.empty()) ggamma[static_cast<std::size_t>(ch)] += acc_gamma;
      if (!gbeta.empty()) gbeta[static_cast<std::size_t>(ch)] += acc_beta;
    }
    if (gx.empty()) continue;
    T* gxb = gx.data() + b * c * plane;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* row = xb + ch * plane;
      const T* grow = gb + ch * plane;
      T* dst = gxb + ch * plane;
      const T gm = gamma[static_cast<std::size_t>(ch)];
      for (std::int64_t p = 0; p < plane; ++p) {
        const T xhat = (row[p] - mean[p]) * rstd[p];
        dst[p] += rstd[p] * (grow[p] * gm - sum_g[p] * inv_c - xhat * sum_gx[p] * inv_c);
      }
    }
  }
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax_lastdim: rank-0 tensor");
  const std::int64_t len = x.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / len;
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * len;
    T* dst = out.data() + r * len;
    const T mx = *std::max_element(src, src + len);
    T sum = T(0);
    for (std::int64_t i = 0; i < len; ++i) {
      dst[i] = std::exp(src[i] - mx);
      sum += dst[i];
    }
    const T inv = T(1) / sum;
    for (std::int64_t i = 0; i < len; ++i) dst[i] *= inv;
  }
  return out;
}

template <typename T>
void softmax_lastdim_backward(const Tensor<T>& y, std::span<const T> gout, std::span<T> gx) {
  const std::int64_t len = y.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(y.numel()) / len;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* yr = y.data() + r * len;
    const T* gr = gout.data() + r * len;
    T dot = T(0);
    for (std::int64_t i = 0; i < len; ++i) dot += yr[i] * gr[i];
    T* dst = gx.data() + r * len;
    for (std::int64_t i = 0; i < len; ++i) dst[i] += yr[i] * (gr[i] - dot);
  }
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> xs) {
  if (xs.empty()) throw DimensionError("concat_channels: no inputs");
  const Tensor<T>& first = *xs[0];
  require_rank(first, 4, "concat_channels input");
  std::int64_t channels = 0;
  for (const Tensor<T>* t : xs) {
    require_rank(*t, 4, "concat_channels input");
    if (t->dim(0) != first.dim(0) || t->dim(2) != first.dim(2) || t->dim(3) != first.dim(3)) {
      throw DimensionError("concat_channels: " + to_string(t->shape()) + " is not aligned with " +
                           to_string(first.shape()));
    }
    channels += t->dim(1);
  }
  const std::int64_t n = first.dim(0), plane = first.dim(2) * first.dim(3);
  Tensor<T> out({n, channels, first.dim(2), first.dim(3)});
  for (std::int64_t b = 0; b < n; ++b) {
    T* dst = out.data() + b * channels * plane;
    for (const Tensor<T>* t : xs) {
      const std::int64_t block = t->dim(1) * plane;
      const T* src = t->data() + b * block;
      std::copy(src, src + block, dst);
      dst += block;
    }
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : xs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const Tensor<T>* const>(ptrs));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t first, std::int64_t count) {
  require_rank(x, 4, "slice_channels input");
  if (first < 0 || count <= 0 || first + count > x.dim(1)) {
    throw DimensionError("slice_channels: range out of bounds for " + to_string(x.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({n, count, x.dim(2), x.dim(3)});
  for (std::int64_t b = 0; b < n; ++b) {
    const T* src = x.data() + (b * c + first) * plane;
    std::copy(src, src + count * plane, out.data() + b * count * plane);
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_avg_pool(const Tensor<T>& x, int k, int stride, int padding) {
  require_rank(x, 4, "depthwise_avg_pool input");
  if (k <= 0 || k % 2 == 0) throw ConfigError("depthwise_avg_pool: kernel must be odd and positive");
  if (stride < 1 || padding < 0) throw ConfigError("depthwise_avg_pool: stride must be >= 1 and padding >= 0");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_out_extent(h, k, stride, padding);
  const std::int64_t ow = conv_out_extent(w, k, stride, padding);
  Tensor<T> out({n, c, oh, ow});
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data() + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t y0 = std::max<std::int64_t>(y * stride - padding, 0);
      const std::int64_t y1 = std::min<std::int64_t>(y * stride - padding + k, h);
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        const std::int64_t x0 = std::max<std::int64_t>(xo * stride - padding, 0);
        const std::int64_t x1 = std::min<std::int64_t>(xo * stride - padding + k, w);
        T acc = T(0);
        for (std::int64_t i = y0; i < y1; ++i) {
          for (std::int64_t j = x0; j < x1; ++j) acc += src[i * w + j];
        }
        dst[y * ow + xo] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

template <typename T>
void depthwise_avg_pool_backward(const Shape& in_shape, std::span<const T> gout, int k, int stride, int padding,
                                 std::span<T> gx) {
  const std::int64_t n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const std::int64_t oh = conv_out_extent(h, k, stride, padding);
  const std::int64_t ow = conv_out_extent(w, k, stride, padding);
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* g = gout.data() + nc * oh * ow;
    T* dst = gx.data() + nc * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      const std::int64_t y0 = std::max<std::int64_t>(y * stride - padding, 0);
      const std::int64_t y1 = std::min<std::int64_t>(y * stride - padding + k, h);
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        const std::int64_t x0 = std::max<std::int64_t>(xo * stride - padding, 0);
        const std::int64_t x1 = std::min<std::int64_t>(xo * stride - padding + k, w);
        const T share = g[y * ow + xo] / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::int64_t i = y0; i < y1; ++i) {
          for (std::int64_t j = x0; j < x1; ++j) dst[i * w + j] += share;
        }
      }
    }
  }
}

template <typename T>
T gelu(T x) {
  const T c0 = static_cast<T>(kGeluC0), c1 = static_cast<T>(kGeluC1);
  return T(0.5) * x * (T(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  const T c0 = static_cast<T>(kGeluC0), c1 = static_cast<T>(kGeluC1);
  const T t = std::tanh(c0 * (x + c1 * x * x * x));
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c0 * (T(1) + T(3) * c1 * x * x);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = gelu(x[i]);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w, 2, "linear weight");
  return conv2d(x, w.reshaped({w.dim(0), w.dim(1), 1, 1}), b, 1, 0);
}

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
                      const Tensor<T>& b2, int ratio) {
  require_rank(x, 4, "mlp input");
  require_rank(w1, 2, "mlp fc1 weight");
  require_rank(w2, 2, "mlp fc2 weight");
  const std::int64_t c = x.dim(1);
  if (w1.dim(0) != ratio * c || w1.dim(1) != c || w2.dim(0) != c || w2.dim(1) != ratio * c) {
    throw DimensionError("mlp: weights " + to_string(w1.shape()) + "/" + to_string(w2.shape()) +
                         " do not match width " + std::to_string(c) + " and ratio " + std::to_string(ratio));
  }
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

#define WTPOSE_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);                        \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int, int, std::span<T>,     \
                                std::span<T>, std::span<T>);                                                        \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, std::int64_t, std::int64_t);                               \
  template void bilinear_upsample_backward(const Shape&, std::span<const T>, std::int64_t, std::int64_t,            \
                                           std::span<T>);                                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                      \
  template void layer_norm_backward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, double, std::span<T>,   \
                                    std::span<T>, std::span<T>);                                                    \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                                             \
  template void softmax_lastdim_backward(const Tensor<T>&, std::span<const T>, std::span<T>);                       \
  template Tensor<T> concat_channels(std::span<const Tensor<T>* const>);                                            \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                                \
  template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);                                  \
  template Tensor<T> depthwise_avg_pool(const Tensor<T>&, int, int, int);                                           \
  template void depthwise_avg_pool_backward(const Shape&, std::span<const T>, int, int, int, std::span<T>);         \
  template T gelu(T);                                                                                               \
  template T gelu_derivative(T);                                                                                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mlp_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                 const Tensor<T>&, int);

WTPOSE_INSTANTIATE_OPS(float)
WTPOSE_INSTANTIATE_OPS(double)

}  // namespace wtpose::ops
