#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "senpa/sensor.hpp"

namespace senpa {

/// Common pixel spacing every channel is resampled to.
inline constexpr float kGridSpacingM = 5.0f;

/// Sensor parameters of one channel as seen by the model: (lambda_c, sigma_c).
struct ChannelParams {
  SpectralResponseFunction srf;
  float gsd_m = kGridSpacingM;

  friend bool operator==(const ChannelParams&, const ChannelParams&) = default;
};

/// C x H x W reflectance-like tensor with per-channel sensor parameters and
/// optional per-pixel class labels. Pixels are stored channel-major.
struct MultispectralSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::vector<ChannelParams> params;
  std::optional<std::vector<std::uint16_t>> labels;
  float grid_spacing_m = kGridSpacingM;

  std::size_t channels() const { return params.size(); }
  std::size_t plane() const { return height * width; }

  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(pixels).subspan(c * plane(), plane());
  }
  std::span<float> channel(std::size_t c) {
    return std::span<float>(pixels).subspan(c * plane(), plane());
  }

  /// Throws ConfigError when shapes or parameters are inconsistent.
  void validate() const;

  /// New sample with the listed channels in the listed order.
  MultispectralSample select_channels(std::span<const std::size_t> indices) const;

  /// Spatial window [y0, y0 + h) x [x0, x0 + w).
  MultispectralSample crop(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const;

  friend bool operator==(const MultispectralSample&, const MultispectralSample&) = default;
};

/// Parameters of the listed sensor channels.
std::vector<ChannelParams> channel_params(const SensorSpec& sensor,
                                          std::span<const std::size_t> indices);

}  // namespace senpa
