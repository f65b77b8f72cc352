#pragma once

// Synthetic hyperspectral scenes and their rendering through virtual sensors.
//
// A scene is a per-pixel convex mixture of K endmember spectra. Rendering a
// band is the spectral integral of the SRF against the pixel spectrum, so the
// renderer is exactly linear in the SRF; spectral superposition of channels
// is therefore realisable as a virtual sensor.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "senpa/sample.hpp"
#include "senpa/sensor.hpp"

namespace senpa {

inline constexpr std::size_t kMaxClasses = 8;
inline constexpr std::size_t kMinSceneSize = 32;

struct SceneOptions {
  /// Seed of the class-level endmember library shared by all scenes.
  std::uint64_t library_seed = 2024;
  /// Per-scene multiplicative amplitude jitter of each endmember, +-jitter.
  double jitter = 0.1;
  /// Global endmember scale; see calibrate_amplitude().
  double amplitude = 1.0;
  /// Standard deviation (pixels) of the Gaussian smoothing of abundance fields.
  double correlation_px = 4.0;
  /// Softmax temperature turning smoothed fields into abundances.
  double temperature = 0.35;
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;
};

struct HyperspectralScene {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 0;
  std::vector<double> endmembers;  ///< classes x kSrfLength
  std::vector<double> abundances;  ///< classes x (height * width), simplex per pixel
  std::uint64_t seed = 0;

  std::size_t pixels() const { return height * width; }
  double abundance(std::size_t k, std::size_t y, std::size_t x) const {
    return abundances[k * pixels() + y * width + x];
  }
  /// S(y, x, band) = sum_k abundance_k(y, x) * endmember_k(band)
  double spectrum(std::size_t y, std::size_t x, std::size_t band) const;
};

struct LandcoverMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> classes;

  friend bool operator==(const LandcoverMask&, const LandcoverMask&) = default;
};

struct GeneratedScene {
  HyperspectralScene scene;
  LandcoverMask mask;
};

/// K unscaled library spectra (peak 1), each a baseline plus Gaussian bumps.
std::vector<double> endmember_library(std::uint64_t library_seed, std::size_t classes);

/// Library spectra with the per-scene jitter for `seed` and the global amplitude.
std::vector<double> scene_endmembers(std::uint64_t seed, std::size_t classes,
                                     const SceneOptions& options);

GeneratedScene generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                              std::size_t classes, const SceneOptions& options = {});

/// Per-pixel argmax over abundances, ties to the lowest class index.
LandcoverMask derive_landcover(const HyperspectralScene& scene);

/// Amplitude that keeps every rendered band of the given sensors <= 1 over
/// `scenes` random scenes. Rendered values are bounded by the largest
/// endmember band response because abundances are convex.
double calibrate_amplitude(std::span<const SensorSpec> sensors, std::size_t classes,
                           const SceneOptions& options, std::size_t scenes = 1000);

/// x(y, x) = sum_w srf[w] * S(y, x, w), 1 nm spacing, no normalisation.
Image render_band(const HyperspectralScene& scene, std::span<const float> srf);
Image render_band(const HyperspectralScene& scene, const SpectralResponseFunction& srf);

/// Gaussian blur std in 5 m pixels used to degrade a channel from
/// `gsd_native` to `gsd_target`: 0.5 * sqrt((t/5)^2 - (n/5)^2).
double gsd_blur_sigma_px(double gsd_native, double gsd_target);

/// Normalised Gaussian taps with radius ceil(4 sigma).
std::vector<double> gaussian_taps(double sigma_px);

/// Degrades an image on the 5 m grid from `gsd_native` to `gsd_target`:
/// Gaussian blur, antialiased cubic decimation to the target spacing, cubic upsampling
/// back to the input shape. Identity when the GSDs are equal.
Image apply_gsd(const Image& image, double gsd_native, double gsd_target);

/// Renders the given (SRF, GSD) channels: render_band then apply_gsd(5, gsd).
MultispectralSample render_channels(const HyperspectralScene& scene, const LandcoverMask& mask,
                                    std::span<const ChannelParams> params);

/// Renders a distinct subset of a sensor's channels.
MultispectralSample render_sample(const HyperspectralScene& scene, const LandcoverMask& mask,
                                  const SensorSpec& sensor,
                                  std::span<const std::size_t> channel_subset);

}  // namespace senpa
