#include "senpa/sample.hpp"

#include <algorithm>
#include <string>

#include "senpa/error.hpp"

namespace senpa {

void MultispectralSample::validate() const {
  require(!params.empty(), "sample has no channels");
  require(height > 0 && width > 0, "sample has empty spatial extent");
  require(pixels.size() == channels() * plane(), "sample pixel count does not match C x H x W");
  require(grid_spacing_m == kGridSpacingM, "sample is not on the 5 m grid");
  for (const auto& p : params) {
    require(p.srf.values().size() == kSrfLength, "sample SRF has wrong length");
    require(p.gsd_m > 0.0f, "sample GSD must be positive");
  }
  if (labels) require(labels->size() == plane(), "label map does not match H x W");
}

MultispectralSample MultispectralSample::select_channels(
    std::span<const std::size_t> indices) const {
  MultispectralSample out;
  out.height = height;
  out.width = width;
  out.labels = labels;
  out.grid_spacing_m = grid_spacing_m;
  out.pixels.reserve(indices.size() * plane());
  for (std::size_t c : indices) {
    require(c < channels(), "channel index " + std::to_string(c) + " out of range");
    const auto src = channel(c);
    out.pixels.insert(out.pixels.end(), src.begin(), src.end());
    out.params.push_back(params[c]);
  }
  return out;
}

MultispectralSample MultispectralSample::crop(std::size_t y0, std::size_t x0, std::size_t h,
                                              std::size_t w) const {
  require(h > 0 && w > 0 && y0 + h <= height && x0 + w <= width, "crop exceeds sample bounds");
  MultispectralSample out;
  out.height = h;
  out.width = w;
  out.params = params;
  out.grid_spacing_m = grid_spacing_m;
  out.pixels.resize(channels() * h * w);
  for (std::size_t c = 0; c < channels(); ++c)
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = pixels.data() + c * plane() + (y0 + y) * width + x0;
      std::copy(src, src + w, out.pixels.data() + c * h * w + y * w);
    }
  if (labels) {
    std::vector<std::uint16_t> lab(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) lab[y * w + x] = (*labels)[(y0 + y) * width + x0 + x];
    out.labels = std::move(lab);
  }
  return out;
}

std::vector<ChannelParams> channel_params(const SensorSpec& sensor,
                                          std::span<const std::size_t> indices) {
  std::vector<ChannelParams> out;
  out.reserve(indices.size());
  for (std::size_t c : indices) {
    require(c < sensor.size(), "channel index " + std::to_string(c) + " out of range for sensor " +
                                   sensor.name);
    out.push_back({sensor.channels[c].srf, static_cast<float>(sensor.channels[c].gsd_m)});
  }
  return out;
}

}  // namespace senpa
