#pragma once

// Spectral response functions and sensor definitions.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace senpa {

/// Wavelength grid: 2300 samples at 300..2599 nm, 1 nm apart.
inline constexpr std::size_t kSrfLength = 2300;
inline constexpr int kSrfFirstNm = 300;

/// Per-channel sensitivity on the 1 nm grid. Values lie in [0, 1] and at
/// least one is positive.
class SpectralResponseFunction {
 public:
  SpectralResponseFunction() = default;

  /// Validates length, range and non-degeneracy.
  static SpectralResponseFunction from_grid(std::vector<float> values);

  std::span<const float> values() const { return values_; }
  float at_nm(int wavelength_nm) const;
  bool empty() const { return values_.empty(); }

  /// Sum over the grid (1 nm spacing).
  double integral() const;
  /// Response-weighted mean wavelength in nm.
  double centroid_nm() const;

  friend bool operator==(const SpectralResponseFunction&, const SpectralResponseFunction&) = default;

 private:
  std::vector<float> values_;
};

struct ChannelSpec {
  std::string name;
  SpectralResponseFunction srf;
  double gsd_m = 0.0;
};

struct SensorSpec {
  std::string name;
  std::vector<ChannelSpec> channels;

  std::size_t size() const { return channels.size(); }
  /// Index of a channel by name; throws ConfigError when absent.
  std::size_t index_of(const std::string& channel) const;
};

struct SrfSample {
  double wavelength_nm;
  double response;
};

/// Linear interpolation of sorted samples onto the 1 nm grid; zero outside
/// the sampled support, clamped to [0, 1].
SpectralResponseFunction resample_srf(std::span<const SrfSample> samples);

/// Elementwise a1*a + a2*b with a1, a2 >= 0 and a1 + a2 = 1.
SpectralResponseFunction superpose_srf(const SpectralResponseFunction& a,
                                       const SpectralResponseFunction& b, double alpha1,
                                       double alpha2);

/// Convex combination of two or three response functions.
SpectralResponseFunction superpose_srf_k(
    std::span<const std::pair<SpectralResponseFunction, double>> parts, std::size_t k);

/// Tolerance on the coefficient sum for superposition.
inline constexpr double kSimplexTolerance = 1e-9;

/// Band with a Gaussian profile of the given centre and full width at half
/// maximum, sampled on the grid and peak-normalised to 1.
SpectralResponseFunction gaussian_band(double center_nm, double fwhm_nm);

SensorSpec parse_sensor_spec(const nlohmann::json& j);
nlohmann::json sensor_spec_to_json(const SensorSpec& sensor);
SensorSpec load_sensor_spec(const std::filesystem::path& path);
void save_sensor_spec(const SensorSpec& sensor, const std::filesystem::path& path);

}  // namespace senpa
