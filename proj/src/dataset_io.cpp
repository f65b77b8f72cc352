#include "senpa/dataset_io.hpp"

#include <fstream>
#include <limits>

#include "senpa/binary_io.hpp"
#include "senpa/error.hpp"

namespace senpa {

namespace {

constexpr char kMagic[5] = "SPMS";
constexpr std::uint64_t kHeaderBytes = 4 + 2 + 4;

std::uint64_t sample_bytes(const MultispectralSample& s) {
  const std::uint64_t c = s.channels();
  const std::uint64_t hw = s.plane();
  std::uint64_t bytes = 3 * 2 + 4;
  bytes += c * (4 + 4 * kSrfLength);
  bytes += 4 * c * hw;
  bytes += 1;
  if (s.labels) bytes += 2 * hw;
  return bytes;
}

}  // namespace

std::uint64_t dataset_size_bytes(std::span<const MultispectralSample> samples) {
  std::uint64_t total = kHeaderBytes;
  for (const auto& s : samples) total += sample_bytes(s);
  return total;
}

void write_dataset(std::span<const MultispectralSample> samples,
                   const std::filesystem::path& path) {
  require(samples.size() <= std::numeric_limits<std::uint32_t>::max(), "too many samples");
  for (const auto& s : samples) {
    s.validate();
    require(s.channels() <= 0xffff && s.height <= 0xffff && s.width <= 0xffff,
            "sample dimensions exceed the u16 container limit");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  binary::put_magic(out, kMagic);
  binary::put<std::uint16_t>(out, kDatasetVersion);
  binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    binary::put<std::uint16_t>(out, static_cast<std::uint16_t>(s.channels()));
    binary::put<std::uint16_t>(out, static_cast<std::uint16_t>(s.height));
    binary::put<std::uint16_t>(out, static_cast<std::uint16_t>(s.width));
    binary::put<float>(out, s.grid_spacing_m);
    for (const auto& p : s.params) {
      binary::put<float>(out, p.gsd_m);
      binary::put_floats(out, p.srf.values().data(), kSrfLength);
    }
    binary::put_floats(out, s.pixels.data(), s.pixels.size());
    binary::put<std::uint8_t>(out, s.labels ? 1 : 0);
    if (s.labels)
      for (std::uint16_t v : *s.labels) binary::put<std::uint16_t>(out, v);
  }
  if (!out) throw FormatError("failed while writing " + path.string());
}

std::vector<MultispectralSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  const std::string name = path.string();
  binary::expect_magic(in, kMagic, name);
  const auto version = binary::get<std::uint16_t>(in, "version");
  if (version != kDatasetVersion)
    throw FormatError(name + ": unsupported dataset version " + std::to_string(version));
  const auto count = binary::get<std::uint32_t>(in, "sample count");

  std::vector<MultispectralSample> samples;
  samples.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    MultispectralSample s;
    const auto c = binary::get<std::uint16_t>(in, "channel count");
    s.height = binary::get<std::uint16_t>(in, "height");
    s.width = binary::get<std::uint16_t>(in, "width");
    if (c == 0 || s.height == 0 || s.width == 0)
      throw FormatError(name + ": sample " + std::to_string(i) + " has a zero dimension");
    s.grid_spacing_m = binary::get<float>(in, "grid spacing");
    for (std::uint16_t ch = 0; ch < c; ++ch) {
      ChannelParams p;
      p.gsd_m = binary::get<float>(in, "gsd");
      std::vector<float> srf(kSrfLength);
      binary::get_floats(in, srf.data(), kSrfLength, "srf");
      try {
        p.srf = SpectralResponseFunction::from_grid(std::move(srf));
      } catch (const ConfigError& e) {
        throw FormatError(name + ": invalid SRF in sample " + std::to_string(i) + ": " + e.what());
      }
      s.params.push_back(std::move(p));
    }
    s.pixels.resize(static_cast<std::size_t>(c) * s.plane());
    binary::get_floats(in, s.pixels.data(), s.pixels.size(), "pixels");
    const auto flag = binary::get<std::uint8_t>(in, "label flag");
    if (flag > 1) throw FormatError(name + ": corrupt label flag");
    if (flag == 1) {
      std::vector<std::uint16_t> labels(s.plane());
      for (auto& v : labels) v = binary::get<std::uint16_t>(in, "labels");
      s.labels = std::move(labels);
    }
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw FormatError(name + ": sample " + std::to_string(i) + ": " + e.what());
    }
    samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError(name + ": trailing bytes after the last sample");
  return samples;
}

}  // namespace senpa
