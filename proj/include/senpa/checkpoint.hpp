#pragma once

// "SPCK" checkpoints: a JSON header (model config plus free-form metadata),
// a named parameter table with f32 payloads, and the AdamW state.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "senpa/parameters.hpp"

namespace senpa {

struct TensorRecord {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  bool decay = true;
  std::vector<float> value;
  std::vector<float> m;
  std::vector<float> v;
};

struct Checkpoint {
  nlohmann::json config;
  nlohmann::json meta;
  std::uint64_t optimizer_step = 0;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
};

template <typename T>
Checkpoint make_checkpoint(const nn::ParameterSet<T>& params, nlohmann::json config,
                           nlohmann::json meta);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies matching tensors into `params`. With `strict`, every parameter must
/// be present; otherwise missing ones keep their current values. Shape
/// mismatches are always errors. Optimizer moments are restored only when
/// `with_optimizer` is set. Returns the number of tensors copied.
template <typename T>
std::size_t restore_parameters(const Checkpoint& ckpt, nn::ParameterSet<T>& params, bool strict,
                               bool with_optimizer);

}  // namespace senpa
