#include "senpa/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "senpa/error.hpp"

namespace senpa {

SpectralResponseFunction SpectralResponseFunction::from_grid(std::vector<float> values) {
  require(values.size() == kSrfLength, "spectral response must have 2300 grid values, got " +
                                           std::to_string(values.size()));
  bool positive = false;
  for (float v : values) {
    require(std::isfinite(v) && v >= 0.0f && v <= 1.0f,
            "spectral response values must lie in [0, 1]");
    positive = positive || v > 0.0f;
  }
  require(positive, "spectral response is identically zero");
  SpectralResponseFunction srf;
  srf.values_ = std::move(values);
  return srf;
}

float SpectralResponseFunction::at_nm(int wavelength_nm) const {
  const int k = wavelength_nm - kSrfFirstNm;
  if (k < 0 || k >= static_cast<int>(values_.size())) return 0.0f;
  return values_[static_cast<std::size_t>(k)];
}

double SpectralResponseFunction::integral() const {
  double acc = 0.0;
  for (float v : values_) acc += v;
  return acc;
}

double SpectralResponseFunction::centroid_nm() const {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < values_.size(); ++k) {
    num += values_[k] * static_cast<double>(kSrfFirstNm + static_cast<int>(k));
    den += values_[k];
  }
  return den > 0.0 ? num / den : 0.0;
}

std::size_t SensorSpec::index_of(const std::string& channel) const {
  for (std::size_t i = 0; i < channels.size(); ++i)
    if (channels[i].name == channel) return i;
  throw ConfigError("sensor '" + name + "' has no channel '" + channel + "'");
}

SpectralResponseFunction resample_srf(std::span<const SrfSample> samples) {
  require(samples.size() >= 2, "spectral response needs at least two samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(std::isfinite(samples[i].wavelength_nm) && std::isfinite(samples[i].response),
            "spectral response samples must be finite");
    require(samples[i].response >= 0.0, "spectral response samples must be non-negative");
    if (i > 0)
      require(samples[i].wavelength_nm > samples[i - 1].wavelength_nm,
              "spectral response wavelengths must be strictly increasing");
  }
  std::vector<float> grid(kSrfLength, 0.0f);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < kSrfLength; ++k) {
    const double wl = static_cast<double>(kSrfFirstNm) + static_cast<double>(k);
    if (wl < samples.front().wavelength_nm || wl > samples.back().wavelength_nm) continue;
    while (seg + 2 < samples.size() && samples[seg + 1].wavelength_nm < wl) ++seg;
    const SrfSample& lo = samples[seg];
    const SrfSample& hi = samples[seg + 1];
    double v;
    if (wl == lo.wavelength_nm) {
      v = lo.response;
    } else if (wl == hi.wavelength_nm) {
      v = hi.response;
    } else {
      const double t = (wl - lo.wavelength_nm) / (hi.wavelength_nm - lo.wavelength_nm);
      v = lo.response + t * (hi.response - lo.response);
    }
    grid[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return SpectralResponseFunction::from_grid(std::move(grid));
}

SpectralResponseFunction superpose_srf_k(
    std::span<const std::pair<SpectralResponseFunction, double>> parts, std::size_t k) {
  require(k == 2 || k == 3, "superposition arity must be 2 or 3");
  require(parts.size() == k, "superposition expects exactly k parts");
  double total = 0.0;
  for (const auto& [srf, alpha] : parts) {
    require(std::isfinite(alpha) && alpha >= 0.0, "superposition coefficients must be >= 0");
    require(srf.values().size() == kSrfLength, "superposition operand has wrong length");
    total += alpha;
  }
  require(std::abs(total - 1.0) <= kSimplexTolerance,
          "superposition coefficients must sum to 1");
  std::vector<float> out(kSrfLength);
  for (std::size_t w = 0; w < kSrfLength; ++w) {
    double acc = 0.0;
    for (const auto& [srf, alpha] : parts) acc += alpha * static_cast<double>(srf.values()[w]);
    out[w] = static_cast<float>(acc);
  }
  return SpectralResponseFunction::from_grid(std::move(out));
}

SpectralResponseFunction superpose_srf(const SpectralResponseFunction& a,
                                       const SpectralResponseFunction& b, double alpha1,
                                       double alpha2) {
  const std::pair<SpectralResponseFunction, double> parts[] = {{a, alpha1}, {b, alpha2}};
  return superpose_srf_k(parts, 2);
}

SpectralResponseFunction gaussian_band(double center_nm, double fwhm_nm) {
  require(fwhm_nm > 0.0, "band width must be positive");
  const double sigma = fwhm_nm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  std::vector<float> grid(kSrfLength);
  for (std::size_t k = 0; k < kSrfLength; ++k) {
    const double d = (static_cast<double>(kSrfFirstNm) + static_cast<double>(k) - center_nm) / sigma;
    const double v = std::exp(-0.5 * d * d);
    grid[k] = v < 1e-6 ? 0.0f : static_cast<float>(v);
  }
  return SpectralResponseFunction::from_grid(std::move(grid));
}

SensorSpec parse_sensor_spec(const nlohmann::json& j) {
  try {
    SensorSpec sensor;
    sensor.name = j.at("name").get<std::string>();
    const auto& channels = j.at("channels");
    require(channels.is_array() && !channels.empty(), "sensor needs at least one channel");
    std::set<std::string> names;
    for (const auto& ch : channels) {
      ChannelSpec spec;
      spec.name = ch.at("name").get<std::string>();
      require(names.insert(spec.name).second, "duplicate channel name '" + spec.name + "'");
      spec.gsd_m = ch.at("gsd_m").get<double>();
      require(std::isfinite(spec.gsd_m) && spec.gsd_m > 0.0,
              "channel '" + spec.name + "' needs gsd_m > 0");
      const auto wl = ch.at("srf").at("wavelengths_nm").get<std::vector<double>>();
      const auto resp = ch.at("srf").at("responses").get<std::vector<double>>();
      require(wl.size() == resp.size(), "channel '" + spec.name +
                                            "': wavelengths and responses differ in length");
      std::vector<SrfSample> samples(wl.size());
      for (std::size_t i = 0; i < wl.size(); ++i) samples[i] = {wl[i], resp[i]};
      spec.srf = resample_srf(samples);
      sensor.channels.push_back(std::move(spec));
    }
    return sensor;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sensor spec schema violation: ") + e.what());
  }
}

nlohmann::json sensor_spec_to_json(const SensorSpec& sensor) {
  nlohmann::json j;
  j["name"] = sensor.name;
  j["channels"] = nlohmann::json::array();
  for (const auto& ch : sensor.channels) {
    // Only the support (plus one zero on each side) is written; resampling
    // the grid-aligned samples reproduces the response exactly.
    const auto v = ch.srf.values();
    std::size_t first = 0;
    std::size_t last = v.size() - 1;
    while (first < v.size() && v[first] == 0.0f) ++first;
    while (last > first && v[last] == 0.0f) --last;
    first = first > 0 ? first - 1 : first;
    last = last + 1 < v.size() ? last + 1 : last;
    nlohmann::json wl = nlohmann::json::array();
    nlohmann::json resp = nlohmann::json::array();
    for (std::size_t k = first; k <= last; ++k) {
      wl.push_back(kSrfFirstNm + static_cast<int>(k));
      resp.push_back(v[k]);
    }
    j["channels"].push_back(
        {{"name", ch.name}, {"gsd_m", ch.gsd_m}, {"srf", {{"wavelengths_nm", wl}, {"responses", resp}}}});
  }
  return j;
}

SensorSpec load_sensor_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sensor spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("sensor spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_sensor_spec(j);
}

void save_sensor_spec(const SensorSpec& sensor, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write sensor spec " + path.string());
  out << sensor_spec_to_json(sensor).dump(2) << '\n';
}

}  // namespace senpa
