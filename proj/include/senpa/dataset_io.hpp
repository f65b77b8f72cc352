#pragma once

// Binary sample container ("SPMS", little-endian).
//
//   magic "SPMS" | version u16 | sample count u32
//   per sample:
//     C, H, W u16 | grid_spacing f32
//     C x { gsd f32 | srf 2300 x f32 }
//     pixels C*H*W x f32
//     label flag u8 | [labels H*W x u16]

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "senpa/sample.hpp"

namespace senpa {

inline constexpr std::uint16_t kDatasetVersion = 1;

void write_dataset(std::span<const MultispectralSample> samples,
                   const std::filesystem::path& path);

std::vector<MultispectralSample> read_dataset(const std::filesystem::path& path);

/// Byte size the container will have for these samples.
std::uint64_t dataset_size_bytes(std::span<const MultispectralSample> samples);

}  // namespace senpa
