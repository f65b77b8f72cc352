#pragma once

// Binary PGM/PPM writers and a tiny CSV formatter.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace senpa {

/// 8-bit greyscale; values are clamped to [lo, hi] and mapped to 0..255.
void write_pgm(const std::filesystem::path& path, std::span<const float> values,
               std::size_t height, std::size_t width, float lo = 0.0f, float hi = 1.0f);

/// 8-bit RGB from interleaved bytes (height * width * 3).
void write_ppm(const std::filesystem::path& path, std::span<const std::uint8_t> rgb,
               std::size_t height, std::size_t width);

/// Fixed colour for each class id (cycles after 8).
std::array<std::uint8_t, 3> class_colour(std::size_t k);

/// Shortest round-trip text for a double ("%.17g" trimmed), stable across runs.
std::string format_number(double value);

/// Joins fields with commas; fields containing commas or quotes are quoted.
std::string csv_row(const std::vector<std::string>& fields);

}  // namespace senpa
