#pragma once

// Masked-reconstruction pretraining.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "senpa/augment.hpp"
#include "senpa/checkpoint.hpp"
#include "senpa/model.hpp"

namespace senpa {

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 3;
  double lr0 = 1e-3;
  double weight_decay = 0.05;
  std::size_t batch = 16;
  std::size_t crop = 48;
  std::size_t channels_per_sample = 4;
  /// Off reproduces the no-augmentation ablation rows.
  bool augment = true;
  AugmentConfig augmentation;
  std::uint64_t seed = 0;
  /// Validation items drawn once from the held-out scenes.
  std::size_t val_items = 64;
  /// Reconstruction triptychs dumped after training.
  std::size_t recon_dumps = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

/// One training item per entry: pick a sample, `channels_per_sample` distinct
/// channels in random order, a random crop, then augmentation.
std::vector<MultispectralSample> assemble_batch(std::span<const MultispectralSample> dataset,
                                                std::span<const std::size_t> sample_indices,
                                                const PretrainConfig& config, Rng& rng);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_s = 0.0;
};

struct PretrainResult {
  std::vector<EpochMetrics> history;
  double best_val = 0.0;
};

/// Paths are optional: without an output directory nothing is written.
struct PretrainOutputs {
  std::optional<std::filesystem::path> dir;
  /// Model and run configuration embedded in checkpoints.
  nlohmann::json config;
  /// Ends the run after this epoch as if interrupted; 0 runs to completion.
  std::size_t stop_after = 0;
};

/// Trains `model` in place. With `resume`, parameters, optimizer state and
/// epoch counter come from that checkpoint and training continues where it
/// stopped; the resulting trajectory equals the uninterrupted run.
/// Throws DivergenceError on a non-finite loss.
template <typename T>
PretrainResult pretrain(SenpaMae<T>& model, std::span<const MultispectralSample> train,
                        std::span<const MultispectralSample> val, const PretrainConfig& config,
                        const PretrainOutputs& outputs = {}, const Checkpoint* resume = nullptr);

/// Held-out reconstruction loss on fixed validation items (no gradients).
template <typename T>
double validation_loss(const SenpaMae<T>& model, std::span<const MultispectralSample> items,
                       std::uint64_t seed);

/// Deterministic validation items: channels and crops drawn from a stream
/// that depends only on the seed.
std::vector<MultispectralSample> validation_items(std::span<const MultispectralSample> val,
                                                  const PretrainConfig& config);

/// Mask / reconstruction / target PGMs per channel under `dir`.
template <typename T>
void dump_reconstruction(const SenpaMae<T>& model, const MultispectralSample& sample, Rng& rng,
                         const std::filesystem::path& dir, const std::string& stem);

}  // namespace senpa
