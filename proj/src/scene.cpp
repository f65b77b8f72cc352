#include "senpa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "senpa/error.hpp"
#include "senpa/kernels.hpp"
#include "senpa/rng.hpp"

namespace senpa {

double HyperspectralScene::spectrum(std::size_t y, std::size_t x, std::size_t band) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < classes; ++k)
    acc += abundance(k, y, x) * endmembers[k * kSrfLength + band];
  return acc;
}

std::vector<double> endmember_library(std::uint64_t library_seed, std::size_t classes) {
  std::vector<double> lib(classes * kSrfLength);
  for (std::size_t k = 0; k < classes; ++k) {
    Rng rng(derive_seed(library_seed, 0x5eedULL, k));
    const double baseline = 0.05 + 0.25 * uniform01(rng);
    const std::size_t bumps = 2 + uniform_index(rng, 3);
    struct Bump {
      double center, width, height;
    };
    std::vector<Bump> shape(bumps);
    for (auto& b : shape) {
      b.center = 380.0 + 2100.0 * uniform01(rng);
      b.width = 40.0 + 300.0 * uniform01(rng);
      b.height = 0.2 + 0.8 * uniform01(rng);
    }
    double peak = 0.0;
    double* e = lib.data() + k * kSrfLength;
    for (std::size_t w = 0; w < kSrfLength; ++w) {
      const double wl = kSrfFirstNm + static_cast<double>(w);
      double v = baseline;
      for (const auto& b : shape) {
        const double d = (wl - b.center) / b.width;
        v += b.height * std::exp(-0.5 * d * d);
      }
      e[w] = v;
      peak = std::max(peak, v);
    }
    for (std::size_t w = 0; w < kSrfLength; ++w) e[w] /= peak;
  }
  return lib;
}

std::vector<double> scene_endmembers(std::uint64_t seed, std::size_t classes,
                                     const SceneOptions& options) {
  auto em = endmember_library(options.library_seed, classes);
  Rng rng(derive_seed(seed, 0xe4dULL));
  for (std::size_t k = 0; k < classes; ++k) {
    const double scale = options.amplitude * (1.0 + options.jitter * (2.0 * uniform01(rng) - 1.0));
    for (std::size_t w = 0; w < kSrfLength; ++w) em[k * kSrfLength + w] *= scale;
  }
  return em;
}

GeneratedScene generate_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                              std::size_t classes, const SceneOptions& options) {
  require(classes >= 2 && classes <= kMaxClasses, "scene needs between 2 and 8 classes");
  require(height >= kMinSceneSize && width >= kMinSceneSize, "scene must be at least 32x32");
  require(options.correlation_px > 0.0 && options.temperature > 0.0,
          "scene smoothing and temperature must be positive");

  HyperspectralScene scene;
  scene.height = height;
  scene.width = width;
  scene.classes = classes;
  scene.seed = seed;
  scene.endmembers = scene_endmembers(seed, classes, options);

  const std::size_t n = height * width;
  const auto taps = gaussian_taps(options.correlation_px);
  std::vector<double> fields(classes * n);
  std::vector<double> noise(n);
  std::vector<double> tmp(n);
  Rng rng(derive_seed(seed, 0xab0ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < classes; ++k) {
    for (auto& v : noise) v = normal(rng);
    std::span<double> field(fields.data() + k * n, n);
    kernels::convolve_axis(noise, tmp, height, width, taps, true);
    kernels::convolve_axis(tmp, field, height, width, taps, false);
    double mean = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    const double inv_std = 1.0 / std::sqrt(var / static_cast<double>(n) + 1e-12);
    for (auto& v : field) v = (v - mean) * inv_std;
  }
  scene.abundances.resize(classes * n);
  for (std::size_t p = 0; p < n; ++p) {
    double mx = -1e300;
    for (std::size_t k = 0; k < classes; ++k) mx = std::max(mx, fields[k * n + p]);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double e = std::exp((fields[k * n + p] - mx) / options.temperature);
      scene.abundances[k * n + p] = e;
      total += e;
    }
    for (std::size_t k = 0; k < classes; ++k) scene.abundances[k * n + p] /= total;
  }
  GeneratedScene out{std::move(scene), {}};
  out.mask = derive_landcover(out.scene);
  return out;
}

LandcoverMask derive_landcover(const HyperspectralScene& scene) {
  LandcoverMask mask{scene.height, scene.width, std::vector<std::uint16_t>(scene.pixels())};
  const std::size_t n = scene.pixels();
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scene.classes; ++k)
      if (scene.abundances[k * n + p] > scene.abundances[best * n + p]) best = k;
    mask.classes[p] = static_cast<std::uint16_t>(best);
  }
  return mask;
}

double calibrate_amplitude(std::span<const SensorSpec> sensors, std::size_t classes,
                           const SceneOptions& options, std::size_t scenes) {
  require(!sensors.empty(), "amplitude calibration needs at least one sensor");
  SceneOptions unit = options;
  unit.amplitude = 1.0;
  double worst = 0.0;
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto em = scene_endmembers(s, classes, unit);
    for (const auto& sensor : sensors)
      for (const auto& ch : sensor.channels)
        for (std::size_t k = 0; k < classes; ++k) {
          double acc = 0.0;
          for (std::size_t w = 0; w < kSrfLength; ++w)
            acc += static_cast<double>(ch.srf.values()[w]) * em[k * kSrfLength + w];
          worst = std::max(worst, acc);
        }
  }
  require(worst > 0.0, "calibration produced an all-zero response");
  return 1.0 / worst;
}

Image render_band(const HyperspectralScene& scene, std::span<const float> srf) {
  require(srf.size() == kSrfLength, "render_band needs a 2300-sample SRF");
  Image img{scene.height, scene.width, std::vector<double>(scene.pixels())};
  kernels::render_band(scene.abundances, scene.endmembers, srf, scene.classes, img.data);
  return img;
}

Image render_band(const HyperspectralScene& scene, const SpectralResponseFunction& srf) {
  return render_band(scene, srf.values());
}

double gsd_blur_sigma_px(double gsd_native, double gsd_target) {
  const double t = gsd_target / kGridSpacingM;
  const double n = gsd_native / kGridSpacingM;
  return 0.5 * std::sqrt(std::max(0.0, t * t - n * n));
}

std::vector<double> gaussian_taps(double sigma_px) {
  const auto radius = static_cast<std::size_t>(std::ceil(4.0 * sigma_px));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double d = (static_cast<double>(i) - static_cast<double>(radius)) / sigma_px;
    taps[i] = std::exp(-0.5 * d * d);
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

Image apply_gsd(const Image& image, double gsd_native, double gsd_target) {
  require(gsd_native >= kGridSpacingM - 1e-9, "native GSD must be >= 5 m");
  require(gsd_target >= gsd_native, "target GSD must not be finer than the native GSD");
  if (gsd_target == gsd_native) return image;

  const std::size_t h = image.height;
  const std::size_t w = image.width;
  const double sigma = gsd_blur_sigma_px(gsd_native, gsd_target);
  const auto taps = gaussian_taps(sigma);
  std::vector<double> tmp(h * w);
  std::vector<double> blurred(h * w);
  kernels::convolve_axis(image.data, tmp, h, w, taps, true);
  kernels::convolve_axis(tmp, blurred, h, w, taps, false);

  const double factor = gsd_target / kGridSpacingM;
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h / factor)));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w / factor)));
  std::vector<double> a(h * sw);
  std::vector<double> small(sh * sw);
  kernels::cubic_resample_axis(blurred, h, w, a, sw, true);
  kernels::cubic_resample_axis(a, h, sw, small, sh, false);

  std::vector<double> b(sh * w);
  Image out{h, w, std::vector<double>(h * w)};
  kernels::cubic_resample_axis(small, sh, sw, b, w, true);
  kernels::cubic_resample_axis(b, sh, w, out.data, h, false);
  return out;
}

MultispectralSample render_channels(const HyperspectralScene& scene, const LandcoverMask& mask,
                                    std::span<const ChannelParams> params) {
  require(!params.empty(), "render needs at least one channel");
  require(mask.classes.size() == scene.pixels(), "mask does not match scene");
  MultispectralSample out;
  out.height = scene.height;
  out.width = scene.width;
  out.pixels.reserve(params.size() * scene.pixels());
  for (const auto& p : params) {
    const Image band = apply_gsd(render_band(scene, p.srf), kGridSpacingM, p.gsd_m);
    for (double v : band.data) out.pixels.push_back(static_cast<float>(v));
    out.params.push_back(p);
  }
  out.labels = mask.classes;
  return out;
}

MultispectralSample render_sample(const HyperspectralScene& scene, const LandcoverMask& mask,
                                  const SensorSpec& sensor,
                                  std::span<const std::size_t> channel_subset) {
  require(!channel_subset.empty(), "channel subset is empty");
  std::set<std::size_t> seen;
  for (std::size_t c : channel_subset) {
    require(c < sensor.size(), "channel index " + std::to_string(c) + " out of range");
    require(seen.insert(c).second, "duplicate channel index " + std::to_string(c));
  }
  const auto params = channel_params(sensor, channel_subset);
  return render_channels(scene, mask, params);
}

}  // namespace senpa
