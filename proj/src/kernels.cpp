#include "senpa/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <vector>

#include <omp.h>

namespace senpa::kernels {

namespace {

int g_threads = 1;

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t len) {
  if (i < 0) return 0;
  if (static_cast<std::size_t>(i) >= len) return len - 1;
  return static_cast<std::size_t>(i);
}

constexpr std::size_t kRowBlock = 8;
constexpr std::size_t kColTile = 32;

// Register tile: rows [r0, r0 + R) x columns [j0, j0 + kColTile). Every output
// element is accumulated over p = 0..k-1 in order, whatever R is, so a row's
// result never depends on which block it lands in.
template <typename T, std::size_t R>
void matmul_tile(const T* a, const T* b, T* c, std::size_t r0, std::size_t j0, std::size_t k,
                 std::size_t n, bool accumulate) {
  T acc[R][kColTile];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t jj = 0; jj < kColTile; ++jj)
      acc[r][jj] = accumulate ? c[(r0 + r) * n + j0 + jj] : T(0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[(r0 + r) * k + p];
      for (std::size_t jj = 0; jj < kColTile; ++jj) acc[r][jj] += av * brow[jj];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t jj = 0; jj < kColTile; ++jj) c[(r0 + r) * n + j0 + jj] = acc[r][jj];
}

template <typename T, std::size_t R>
void matmul_rows(const T* a, const T* b, T* c, std::size_t r0, std::size_t k, std::size_t n,
                 bool accumulate) {
  std::size_t j0 = 0;
  for (; j0 + kColTile <= n; j0 += kColTile) matmul_tile<T, R>(a, b, c, r0, j0, k, n, accumulate);
  if (j0 == n) return;
  const std::size_t rem = n - j0;
  T acc[R][kColTile];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t jj = 0; jj < rem; ++jj)
      acc[r][jj] = accumulate ? c[(r0 + r) * n + j0 + jj] : T(0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[(r0 + r) * k + p];
      for (std::size_t jj = 0; jj < rem; ++jj) acc[r][jj] += av * brow[jj];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t jj = 0; jj < rem; ++jj) c[(r0 + r) * n + j0 + jj] = acc[r][jj];
}

template <typename T>
void matmul_row_block(const T* a, const T* b, T* c, std::size_t r0, std::size_t rows,
                      std::size_t k, std::size_t n, bool accumulate) {
  switch (rows) {
    case 8: matmul_rows<T, 8>(a, b, c, r0, k, n, accumulate); break;
    case 7: matmul_rows<T, 7>(a, b, c, r0, k, n, accumulate); break;
    case 6: matmul_rows<T, 6>(a, b, c, r0, k, n, accumulate); break;
    case 5: matmul_rows<T, 5>(a, b, c, r0, k, n, accumulate); break;
    case 4: matmul_rows<T, 4>(a, b, c, r0, k, n, accumulate); break;
    case 3: matmul_rows<T, 3>(a, b, c, r0, k, n, accumulate); break;
    case 2: matmul_rows<T, 2>(a, b, c, r0, k, n, accumulate); break;
    default: matmul_rows<T, 1>(a, b, c, r0, k, n, accumulate); break;
  }
}

}  // namespace

void set_num_threads(int threads) {
  g_threads = std::max(1, threads);
  omp_set_num_threads(g_threads);
}

int num_threads() { return g_threads; }

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  assert(a.size() >= m * k && b.size() >= k * n && c.size() >= m * n);
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
  const bool parallel = m * k * n > 32768 && g_threads > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
    matmul_row_block(a.data(), b.data(), c.data(), r0, std::min(kRowBlock, m - r0), k, n,
                     accumulate);
  }
}

template <typename T>
void matmul_reference(std::span<const T> a, std::span<const T> b, std::span<T> c,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void transpose(std::span<const T> a, std::span<T> out, std::size_t m, std::size_t n) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += tile)
    for (std::size_t j0 = 0; j0 < n; j0 += tile)
      for (std::size_t i = i0; i < std::min(m, i0 + tile); ++i)
        for (std::size_t j = j0; j < std::min(n, j0 + tile); ++j) out[j * m + i] = a[i * n + j];
}

void render_band(std::span<const double> abundances, std::span<const double> endmembers,
                 std::span<const float> srf, std::size_t classes, std::span<double> out) {
  const std::size_t bands = srf.size();
  const std::size_t pixels = out.size();
  // The band integral is linear in the abundances, so integrate each
  // endmember once and mix the scalar responses per pixel.
  std::vector<double> response(classes, 0.0);
  for (std::size_t k = 0; k < classes; ++k) {
    const double* e = endmembers.data() + k * bands;
    double acc = 0.0;
    for (std::size_t w = 0; w < bands; ++w) acc += static_cast<double>(srf[w]) * e[w];
    response[k] = acc;
  }
  const auto n = static_cast<std::ptrdiff_t>(pixels);
#pragma omp parallel for schedule(static) if (g_threads > 1)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < classes; ++k)
      acc += abundances[k * pixels + static_cast<std::size_t>(p)] * response[k];
    out[static_cast<std::size_t>(p)] = acc;
  }
}

void render_band_reference(std::span<const double> abundances,
                           std::span<const double> endmembers, std::span<const float> srf,
                           std::size_t classes, std::span<double> out) {
  const std::size_t bands = srf.size();
  const std::size_t pixels = out.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    double acc = 0.0;
    for (std::size_t w = 0; w < bands; ++w) {
      double spectrum = 0.0;
      for (std::size_t k = 0; k < classes; ++k)
        spectrum += abundances[k * pixels + p] * endmembers[k * bands + w];
      acc += static_cast<double>(srf[w]) * spectrum;  // delta-lambda = 1 nm
    }
    out[p] = acc;
  }
}

void convolve_axis(std::span<const double> src, std::span<double> dst, std::size_t height,
                   std::size_t width, std::span<const double> taps, bool horizontal) {
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto rows = static_cast<std::ptrdiff_t>(height);
  // Per pixel the taps are summed in the same order as the reference, so
  // both agree bitwise.
  if (!horizontal) {
#pragma omp parallel for schedule(static) if (g_threads > 1)
    for (std::ptrdiff_t y = 0; y < rows; ++y) {
      double* out = dst.data() + static_cast<std::size_t>(y) * width;
      std::fill(out, out + width, 0.0);
      for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
        const double w = taps[static_cast<std::size_t>(t + radius)];
        const double* in = src.data() + clamp_index(y + t, height) * width;
        for (std::size_t x = 0; x < width; ++x) out[x] += w * in[x];
      }
    }
    return;
  }
#pragma omp parallel for schedule(static) if (g_threads > 1)
  for (std::ptrdiff_t y = 0; y < rows; ++y) {
    const double* in = src.data() + static_cast<std::size_t>(y) * width;
    double* out = dst.data() + static_cast<std::size_t>(y) * width;
    for (std::size_t x = 0; x < width; ++x) {
      const auto xi = static_cast<std::ptrdiff_t>(x);
      double acc = 0.0;
      if (xi >= radius && xi + radius < static_cast<std::ptrdiff_t>(width)) {
        const double* base = in + (xi - radius);
        for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * base[k];
      } else {
        for (std::ptrdiff_t t = -radius; t <= radius; ++t)
          acc += taps[static_cast<std::size_t>(t + radius)] * in[clamp_index(xi + t, width)];
      }
      out[x] = acc;
    }
  }
}

void convolve_axis_reference(std::span<const double> src, std::span<double> dst,
                             std::size_t height, std::size_t width,
                             std::span<const double> taps, bool horizontal) {
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
        std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y);
        std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x);
        (horizontal ? sx : sy) += t;
        sy = std::clamp<std::ptrdiff_t>(sy, 0, static_cast<std::ptrdiff_t>(height) - 1);
        sx = std::clamp<std::ptrdiff_t>(sx, 0, static_cast<std::ptrdiff_t>(width) - 1);
        acc += taps[static_cast<std::size_t>(t + radius)] *
               src[static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)];
      }
      dst[y * width + x] = acc;
    }
  }
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct CubicStencil {
  std::ptrdiff_t base;
  std::vector<double> w;
  double total;
};

// Output sample d sits at x_src = (d + 0.5) * scale - 0.5. When shrinking,
// the kernel is stretched by the scale so every input sample contributes
// (no aliasing); weights are renormalised because the stretched kernel is
// only approximately a partition of unity.
double cubic_support(std::size_t src_len, std::size_t dst_len) {
  return std::max(1.0, static_cast<double>(src_len) / static_cast<double>(dst_len));
}

std::vector<CubicStencil> cubic_stencils(std::size_t src_len, std::size_t dst_len) {
  std::vector<CubicStencil> out(dst_len);
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  const double support = cubic_support(src_len, dst_len);
  for (std::size_t d = 0; d < dst_len; ++d) {
    const double pos = (static_cast<double>(d) + 0.5) * scale - 0.5;
    const auto lo = static_cast<std::ptrdiff_t>(std::floor(pos - 2.0 * support));
    const auto hi = static_cast<std::ptrdiff_t>(std::ceil(pos + 2.0 * support));
    out[d].base = lo;
    out[d].total = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double w = cubic_weight((pos - static_cast<double>(i)) / support);
      out[d].w.push_back(w);
      out[d].total += w;
    }
  }
  return out;
}

}  // namespace

void cubic_resample_axis(std::span<const double> src, std::size_t height, std::size_t width,
                         std::span<double> dst, std::size_t dst_len, bool horizontal) {
  const std::size_t src_len = horizontal ? width : height;
  const auto stencils = cubic_stencils(src_len, dst_len);
  const std::size_t out_w = horizontal ? dst_len : width;
  const std::size_t out_h = horizontal ? height : dst_len;
  const auto rows = static_cast<std::ptrdiff_t>(out_h);
#pragma omp parallel for schedule(static) if (g_threads > 1)
  for (std::ptrdiff_t yy = 0; yy < rows; ++yy) {
    const auto y = static_cast<std::size_t>(yy);
    for (std::size_t x = 0; x < out_w; ++x) {
      const CubicStencil& s = stencils[horizontal ? x : y];
      double acc = 0.0;
      for (std::size_t t = 0; t < s.w.size(); ++t) {
        const std::size_t i = clamp_index(s.base + static_cast<std::ptrdiff_t>(t), src_len);
        acc += s.w[t] * (horizontal ? src[y * width + i] : src[i * width + x]);
      }
      dst[y * out_w + x] = acc / s.total;
    }
  }
}

void cubic_resample_axis_reference(std::span<const double> src, std::size_t height,
                                   std::size_t width, std::span<double> dst,
                                   std::size_t dst_len, bool horizontal) {
  const std::size_t src_len = horizontal ? width : height;
  const std::size_t out_w = horizontal ? dst_len : width;
  const std::size_t out_h = horizontal ? height : dst_len;
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  const double support = cubic_support(src_len, dst_len);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const double pos = (static_cast<double>(horizontal ? x : y) + 0.5) * scale - 0.5;
      const auto lo = static_cast<std::ptrdiff_t>(std::floor(pos - 2.0 * support));
      const auto hi = static_cast<std::ptrdiff_t>(std::ceil(pos + 2.0 * support));
      double acc = 0.0, total = 0.0;
      for (std::ptrdiff_t i = lo; i <= hi; ++i) {
        const double w = cubic_weight((pos - static_cast<double>(i)) / support);
        const auto ci = static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(src_len) - 1));
        acc += w * (horizontal ? src[y * width + ci] : src[ci * width + x]);
        total += w;
      }
      dst[y * out_w + x] = acc / total;
    }
  }
}

template <typename T>
void im2col3x3(std::span<const T> x, std::size_t height, std::size_t width,
               std::size_t channels, std::span<T> cols) {
  const std::size_t row_len = 9 * channels;
  const auto rows = static_cast<std::ptrdiff_t>(height);
#pragma omp parallel for schedule(static) if (g_threads > 1)
  for (std::ptrdiff_t yy = 0; yy < rows; ++yy) {
    const auto y = static_cast<std::size_t>(yy);
    for (std::size_t xx = 0; xx < width; ++xx) {
      T* out = cols.data() + (y * width + xx) * row_len;
      for (std::size_t tap = 0; tap < 9; ++tap) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(tap / 3) - 1;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(tap % 3) - 1;
        T* dst = out + tap * channels;
        if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(height) ||
            sx >= static_cast<std::ptrdiff_t>(width)) {
          std::fill(dst, dst + channels, T(0));
        } else {
          const T* src = x.data() + (static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * channels;
          std::copy(src, src + channels, dst);
        }
      }
    }
  }
}

template <typename T>
void im2col3x3_reference(std::span<const T> x, std::size_t height, std::size_t width,
                         std::size_t channels, std::span<T> cols) {
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t xx = 0; xx < width; ++xx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          for (std::size_t c = 0; c < channels; ++c) {
            const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
            const auto sx = static_cast<std::ptrdiff_t>(xx) + dx;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(height) &&
                                sx < static_cast<std::ptrdiff_t>(width);
            const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
            cols[(y * width + xx) * 9 * channels + tap * channels + c] =
                inside ? x[(static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * channels + c]
                       : T(0);
          }
}

template <typename T>
void col2im3x3(std::span<const T> dcols, std::size_t height, std::size_t width,
               std::size_t channels, std::span<T> dx) {
  const std::size_t row_len = 9 * channels;
  const auto rows = static_cast<std::ptrdiff_t>(height);
  // Gather form: each input pixel collects from the (up to) nine output
  // pixels whose stencil touched it, in a fixed tap order.
#pragma omp parallel for schedule(static) if (g_threads > 1)
  for (std::ptrdiff_t yy = 0; yy < rows; ++yy) {
    const auto y = static_cast<std::size_t>(yy);
    for (std::size_t xx = 0; xx < width; ++xx) {
      T* dst = dx.data() + (y * width + xx) * channels;
      for (std::size_t tap = 0; tap < 9; ++tap) {
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(y) - (static_cast<std::ptrdiff_t>(tap / 3) - 1);
        const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(xx) - (static_cast<std::ptrdiff_t>(tap % 3) - 1);
        if (oy < 0 || ox < 0 || oy >= static_cast<std::ptrdiff_t>(height) ||
            ox >= static_cast<std::ptrdiff_t>(width))
          continue;
        const T* src = dcols.data() +
                       (static_cast<std::size_t>(oy) * width + static_cast<std::size_t>(ox)) * row_len +
                       tap * channels;
        for (std::size_t c = 0; c < channels; ++c) dst[c] += src[c];
      }
    }
  }
}

#define SENPA_INSTANTIATE(T)                                                                \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t, \
                          std::size_t, std::size_t, bool);                                  \
  template void matmul_reference<T>(std::span<const T>, std::span<const T>, std::span<T>,    \
                                    std::size_t, std::size_t, std::size_t, bool);           \
  template void transpose<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);    \
  template void im2col3x3<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,      \
                             std::span<T>);                                                  \
  template void im2col3x3_reference<T>(std::span<const T>, std::size_t, std::size_t,         \
                                       std::size_t, std::span<T>);                           \
  template void col2im3x3<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,      \
                             std::span<T>);

SENPA_INSTANTIATE(float)
SENPA_INSTANTIATE(double)

#undef SENPA_INSTANTIATE

}  // namespace senpa::kernels
