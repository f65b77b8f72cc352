#include "senpa/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "senpa/error.hpp"

namespace senpa {

namespace {

std::ofstream open_image(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write image " + path.string());
  return out;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, std::span<const float> values,
               std::size_t height, std::size_t width, float lo, float hi) {
  require(values.size() == height * width, "write_pgm: size mismatch");
  require(hi > lo, "write_pgm: empty value range");
  auto out = open_image(path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float t = std::clamp((values[i] - lo) / (hi - lo), 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(t * 255.0f)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, std::span<const std::uint8_t> rgb,
               std::size_t height, std::size_t width) {
  require(rgb.size() == 3 * height * width, "write_ppm: size mismatch");
  auto out = open_image(path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::array<std::uint8_t, 3> class_colour(std::size_t k) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{{0, 100, 0},
                                                                         {255, 187, 34},
                                                                         {255, 255, 76},
                                                                         {240, 150, 255},
                                                                         {250, 0, 0},
                                                                         {180, 180, 180},
                                                                         {0, 100, 200},
                                                                         {0, 207, 117}}};
  return kPalette[k % kPalette.size()];
}

std::string format_number(double value) {
  char buf[40];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") == std::string::npos) {
      line += f;
    } else {
      line += '"';
      for (char ch : f) {
        if (ch == '"') line += '"';
        line += ch;
      }
      line += '"';
    }
  }
  return line;
}

}  // namespace senpa
