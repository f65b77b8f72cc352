#pragma once

// Landcover segmentation on top of the pretrained encoder: multi-layer token
// features are fused per patch position across channels, decoded by a small
// convolutional head, and scored with micro IoU.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "senpa/checkpoint.hpp"
#include "senpa/model.hpp"

namespace senpa {

enum class SensorMode { Fixed, Alternating, Random };

std::string to_string(SensorMode mode);
SensorMode parse_sensor_mode(const std::string& text);

struct FinetuneConfig {
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 2;
  double lr0 = 1e-3;
  double weight_decay = 0.05;
  std::size_t batch = 16;
  std::size_t classes = 8;
  /// Channels fused per position; every training and evaluation item has
  /// exactly this many.
  std::size_t channels = 4;
  std::size_t head_width = 32;
  bool freeze_spe = true;
  /// Leading encoder layers frozen; defaults to ceil(2L / 3).
  std::optional<std::size_t> frozen_layers;
  /// Freezes everything, head included (evaluation-only runs).
  bool freeze_all = false;
  bool balanced = true;
  SensorMode sensor_mode = SensorMode::Fixed;
  std::uint64_t seed = 0;

  void validate(std::size_t enc_layers) const;
  std::size_t frozen_count(std::size_t enc_layers) const;
};

void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);

/// Encoder plus segmentation head in one parameter set. Head parameters are
/// named "seg.*".
template <typename T>
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& model, const FinetuneConfig& config, std::uint64_t seed);

  SenpaMae<T>& backbone() { return backbone_; }
  const SenpaMae<T>& backbone() const { return backbone_; }
  nn::ParameterSet<T>& params() { return backbone_.params(); }
  const FinetuneConfig& config() const { return config_; }
  std::span<const std::size_t> taps() const { return taps_; }

  /// Per tap: G x d grid of channel-fused features.
  std::vector<nn::Tensor<T>> fuse_tokens(std::span<const nn::Tensor<T>> features,
                                         std::size_t channels) const;
  /// (H * W) x K logits from the fused grids.
  nn::Tensor<T> decode_segmentation(std::span<const nn::Tensor<T>> grids) const;
  nn::Tensor<T> forward(const MultispectralSample& sample) const;
  /// Per-pixel argmax class.
  std::vector<std::uint16_t> predict(const MultispectralSample& sample) const;

  /// Applies the freezing policy (requires_grad on every parameter).
  void apply_freeze(bool pretrained);

 private:
  FinetuneConfig config_;
  SenpaMae<T> backbone_;
  std::vector<std::size_t> taps_;
  std::size_t stages_ = 0;
  std::vector<nn::Linear<T>> fuse_;
  std::vector<nn::Linear<T>> project_;
  std::vector<nn::Conv3x3<T>> refine_;
  nn::Conv3x3<T> final_conv_;
  nn::Linear<T> classifier_;
};

/// Draws sample indices with probability proportional to the inverse
/// frequency of each sample's dominant class. Classes that never dominate a
/// sample are dropped from the scheme.
class BalancedSampler {
 public:
  BalancedSampler(std::span<const MultispectralSample> dataset, std::size_t classes);

  std::size_t draw(Rng& rng) const;
  const std::vector<double>& probabilities() const { return probabilities_; }
  const std::vector<std::size_t>& dominant_class() const { return dominant_; }
  /// Classes that dominate at least one sample, ascending.
  const std::vector<std::size_t>& active_classes() const { return active_; }
  const std::vector<std::size_t>& dropped_classes() const { return dropped_; }

 private:
  std::vector<std::size_t> dominant_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
  std::vector<std::size_t> active_;
  std::vector<std::size_t> dropped_;
};

/// Pooled confusion counts; micro IoU = TP / (TP + FP + FN) over all classes.
struct IouCounts {
  std::size_t classes = 0;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  std::vector<std::uint64_t> tp, fp, fn;

  explicit IouCounts(std::size_t k = 0) : classes(k), tp(k), fp(k), fn(k) {}
  void add(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth);
  double micro_iou() const;
  /// NaN for classes absent from both prediction and truth.
  std::vector<double> per_class_iou() const;
};

double micro_iou(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> truth,
                 std::size_t classes);

struct FinetuneEpoch {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_iou = 0.0;
  double wall_s = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> history;
  double final_val_iou = 0.0;
};

struct FinetuneOutputs {
  std::optional<std::filesystem::path> dir;
  nlohmann::json config;
};

/// Training sources: one dataset per sensor arrangement. Fixed uses the
/// first source, Alternating cycles sources per batch, Random draws a source
/// per item and then `channels` random channels from it.
template <typename T>
FinetuneResult finetune(SegmentationModel<T>& model,
                        std::span<const std::vector<MultispectralSample>> sources,
                        std::span<const MultispectralSample> val, const FinetuneConfig& config,
                        const FinetuneOutputs& outputs = {});

/// Source index for one item: always 0 (Fixed), batch_index modulo the
/// source count (Alternating) or uniform (Random).
std::size_t draw_source(const FinetuneConfig& config, std::size_t sources,
                        std::size_t batch_index, Rng& rng);

template <typename T>
IouCounts evaluate(const SegmentationModel<T>& model, std::span<const MultispectralSample> data);

/// Rebuilds a segmentation model from a finetuned checkpoint.
template <typename T>
std::unique_ptr<SegmentationModel<T>> load_segmentation_model(const Checkpoint& ckpt);

}  // namespace senpa
