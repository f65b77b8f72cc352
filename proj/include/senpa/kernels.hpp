#pragma once

// Dense data-parallel kernels.
//
// Every kernel comes in two flavours: a plain `*_reference` loop nest that is
// kept only as a test oracle and benchmark baseline, and the production
// version that is blocked and parallelised with OpenMP. Production kernels
// assign each output element to exactly one thread and accumulate in a fixed
// order, so their results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace senpa::kernels {

/// Number of OpenMP threads used by the production kernels.
void set_num_threads(int threads);
int num_threads();

// ---------------------------------------------------------------------------
// Matrix products (row-major)
// ---------------------------------------------------------------------------

/// c[m,n] (+)= a[m,k] * b[k,n]
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate = false);

template <typename T>
void matmul_reference(std::span<const T> a, std::span<const T> b, std::span<T> c,
                      std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

/// out[n,m] = a[m,n]^T
template <typename T>
void transpose(std::span<const T> a, std::span<T> out, std::size_t m, std::size_t n);

// ---------------------------------------------------------------------------
// Linear spectral rendering
// ---------------------------------------------------------------------------

/// out[p] = sum_w srf[w] * sum_k abundances[k,p] * endmembers[k,w]
///
/// `abundances` is K x pixels, `endmembers` is K x srf.size().
void render_band(std::span<const double> abundances, std::span<const double> endmembers,
                 std::span<const float> srf, std::size_t classes, std::span<double> out);

void render_band_reference(std::span<const double> abundances,
                           std::span<const double> endmembers, std::span<const float> srf,
                           std::size_t classes, std::span<double> out);

// ---------------------------------------------------------------------------
// Separable image filters on H x W row-major images
// ---------------------------------------------------------------------------

/// Correlates every row (horizontal = true) or column with an odd-length
/// kernel, clamping coordinates at the border.
void convolve_axis(std::span<const double> src, std::span<double> dst, std::size_t height,
                   std::size_t width, std::span<const double> taps, bool horizontal);

void convolve_axis_reference(std::span<const double> src, std::span<double> dst,
                             std::size_t height, std::size_t width,
                             std::span<const double> taps, bool horizontal);

/// Keys cubic convolution weight (a = -0.5).
double cubic_weight(double x);

/// Resamples one axis of an image from `src_len` to `dst_len` samples with
/// pixel-centre alignment: x_src = (x_dst + 0.5) * src_len / dst_len - 0.5.
/// Shrinking stretches the cubic kernel by src_len / dst_len (antialiased);
/// weights are normalised to sum to one. `horizontal` resamples the width
/// axis, otherwise the height axis.
void cubic_resample_axis(std::span<const double> src, std::size_t height, std::size_t width,
                         std::span<double> dst, std::size_t dst_len, bool horizontal);

void cubic_resample_axis_reference(std::span<const double> src, std::size_t height,
                                   std::size_t width, std::span<double> dst,
                                   std::size_t dst_len, bool horizontal);

// ---------------------------------------------------------------------------
// 3x3 convolution lowering for channel-last images [H*W, C]
// ---------------------------------------------------------------------------

/// cols[p, (dy*3+dx)*C + c] = x[(y+dy-1, x+dx-1), c], zero outside the image.
template <typename T>
void im2col3x3(std::span<const T> x, std::size_t height, std::size_t width,
               std::size_t channels, std::span<T> cols);

template <typename T>
void im2col3x3_reference(std::span<const T> x, std::size_t height, std::size_t width,
                         std::size_t channels, std::span<T> cols);

/// Adjoint of im2col3x3: dx += scatter(dcols).
template <typename T>
void col2im3x3(std::span<const T> dcols, std::size_t height, std::size_t width,
               std::size_t channels, std::span<T> dx);

}  // namespace senpa::kernels
