#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "senpa/rng.hpp"
#include "senpa/scene.hpp"
#include "senpa/sensor.hpp"
#include "senpa/tensor.hpp"

namespace senpa::test {

inline std::filesystem::path sensor_dir() { return SENPA_SOURCE_DIR "/data/sensors"; }

inline SensorSpec fixture(const std::string& name) {
  return load_sensor_spec(sensor_dir() / (name + ".json"));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("senpa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Four Gaussian bands at 5 m, well separated across the visible and NIR.
inline SensorSpec toy_sensor(std::size_t channels = 4, double gsd = 5.0) {
  SensorSpec s;
  s.name = "toy";
  for (std::size_t c = 0; c < channels; ++c)
    s.channels.push_back({"b" + std::to_string(c), gaussian_band(450.0 + 90.0 * c, 40.0), gsd});
  return s;
}

/// A rendered toy sample with labels, amplitude chosen to keep values in [0, 1].
inline MultispectralSample toy_sample(std::uint64_t seed, std::size_t size = 32,
                                      std::size_t channels = 4, std::size_t classes = 4) {
  SceneOptions opts;
  opts.amplitude = 0.01;
  const auto g = generate_scene(seed, std::max<std::size_t>(size, kMinSceneSize),
                                std::max<std::size_t>(size, kMinSceneSize), classes, opts);
  const SensorSpec sensor = toy_sensor(channels);
  std::vector<std::size_t> idx(channels);
  for (std::size_t c = 0; c < channels; ++c) idx[c] = c;
  auto s = render_sample(g.scene, g.mask, sensor, idx);
  return size < kMinSceneSize ? s.crop(0, 0, size, size) : s;
}

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return v;
}

inline nn::Tensor<double> random_tensor(std::size_t rows, std::size_t cols, Rng& rng,
                                        bool requires_grad = true) {
  return nn::Tensor<double>::from_values(rows, cols, random_values(rows * cols, rng),
                                         requires_grad);
}

/// |a - n| / max(|a|, |n|, floor): relative error with a floor so gradients
/// that are zero up to rounding do not blow the ratio up.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between backward() and central differences with
/// step h over up to `probes` random coordinates of each leaf.
inline double gradient_check(const std::function<nn::Tensor<double>()>& loss_fn,
                             std::vector<nn::Tensor<double>> leaves, Rng& rng,
                             std::size_t probes = 12, double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  const auto loss = loss_fn();
  nn::backward(loss);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    const std::size_t n = leaf.size();
    const std::size_t count = std::min(n, probes);
    const auto picks = sample_distinct(rng, n, count);
    for (std::size_t i : picks) {
      auto v = leaf.mutable_values();
      const double keep = v[i];
      double fp, fm;
      {
        nn::NoGradGuard ng;
        v[i] = keep + h;
        fp = loss_fn().item();
        v[i] = keep - h;
        fm = loss_fn().item();
      }
      v[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, relative_error(a, numeric));
    }
  }
  return worst;
}

}  // namespace senpa::test
