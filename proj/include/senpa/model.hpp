#pragma once

// Sensor-parameter-aware masked autoencoder.
//
// Every P x P patch of every channel becomes one token. Tokens are ordered
// channel-major: token index = c * G + (i * grid_w + j) with G patches per
// channel. In the SPE modes a token receives the positional row of its patch
// position (shared by all channels) plus the sensor encoding of its channel,
// g_srf(srf) + g_gsd(gsd / gsd_scale). In Base mode the positional table has
// one row per (channel index, position) and sensor parameters are ignored.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "senpa/layers.hpp"
#include "senpa/sample.hpp"

namespace senpa {

enum class EncodingMode { Base, Spe1, Spe2 };

std::string to_string(EncodingMode mode);
EncodingMode parse_encoding_mode(const std::string& text);

struct ModelConfig {
  std::size_t d_emb = 96;
  std::size_t patch = 8;
  /// Input height and width (square crops).
  std::size_t image_size = 48;
  /// Channel count the Base positional table is sized for.
  std::size_t max_channels = 4;
  std::size_t enc_layers = 4;
  std::size_t enc_heads = 4;
  std::size_t dec_layers = 2;
  std::size_t dec_heads = 4;
  EncodingMode mode = EncodingMode::Spe2;
  double r_mask = 0.66;
  std::size_t srf_dim = kSrfLength;
  std::size_t mlp_depth = 5;
  std::size_t mlp_ratio = 4;
  double dropout = 0.0;
  double gsd_scale = 30.0;

  void validate() const;
  std::size_t grid() const { return image_size / patch; }
  std::size_t positions() const { return grid() * grid(); }
  std::size_t tokens(std::size_t channels) const { return channels * positions(); }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Number of masked tokens: round(r * n), kept within [1, n - 1].
std::size_t mask_count(std::size_t n, double r_mask);

struct MaskRecord {
  std::size_t tokens = 0;
  /// Ascending token indices.
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  std::vector<std::uint8_t> is_masked;

  static MaskRecord from_masked(std::size_t tokens, std::vector<std::size_t> masked);
};

/// Uniformly random subset of mask_count(n, r) tokens.
MaskRecord random_mask(std::size_t n, double r_mask, Rng& rng);

/// Encoder layers whose outputs feed the segmentation head: ceil(L * j / 4).
std::vector<std::size_t> tap_layers(std::size_t enc_layers);
/// Number of leading encoder layers frozen during finetuning: ceil(2L / 3).
std::size_t frozen_layer_count(std::size_t enc_layers);

/// Rows are tokens in channel-major order, columns the P*P patch pixels.
template <typename T>
std::vector<T> patchify(const MultispectralSample& sample, std::size_t patch);
/// Inverse of patchify into a channel-major C x H x W buffer.
template <typename T>
std::vector<T> unpatchify(std::span<const T> patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t patch);

template <typename T>
struct MaeOutput {
  nn::Tensor<T> reconstruction;  // N x P^2
  nn::Tensor<T> target;          // N x P^2, no gradient
  MaskRecord mask;
  nn::Tensor<T> encoder_output;  // visible tokens after the final encoder norm
  nn::Tensor<T> decoder_input;   // N x d, before the first decoder block
};

template <typename T>
class SenpaMae {
 public:
  SenpaMae(const ModelConfig& config, std::uint64_t seed);
  SenpaMae(const SenpaMae&) = delete;
  SenpaMae& operator=(const SenpaMae&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  /// Linear embedding of every patch: N x d.
  nn::Tensor<T> patchify_embed(const MultispectralSample& sample) const;
  /// Per-channel g_srf(srf) + g_gsd(gsd / scale): C x d.
  nn::Tensor<T> sensor_encoding(std::span<const ChannelParams> params) const;
  /// Encoder-side additive encoding per token: N x d.
  nn::Tensor<T> positional_encoding(std::size_t channels, bool decoder = false) const;
  /// tokens + positional rows + sensor encoding (SPE modes only).
  nn::Tensor<T> encode_sensor_params(const nn::Tensor<T>& tokens,
                                     std::span<const ChannelParams> params) const;
  /// tokens + channel-indexed positional rows (Base mode only).
  nn::Tensor<T> encode_base(const nn::Tensor<T>& tokens, std::size_t channels) const;
  /// Embedding plus the mode's encoding.
  nn::Tensor<T> encode_input(const MultispectralSample& sample) const;

  /// Runs the encoder blocks; returns the output of every block.
  std::vector<nn::Tensor<T>> encoder_blocks(const nn::Tensor<T>& tokens, Rng* dropout_rng) const;

  /// Masked reconstruction. A fixed mask overrides the random draw.
  MaeOutput<T> forward_mae(const MultispectralSample& sample, Rng& rng,
                           const MaskRecord* fixed_mask = nullptr) const;

  /// Unmasked encoder outputs after the listed (1-based) layers.
  std::vector<nn::Tensor<T>> forward_features(const MultispectralSample& sample,
                                              std::span<const std::size_t> taps) const;

  /// Parameter-name prefixes frozen during finetuning.
  std::vector<std::string> frozen_prefixes() const;

 private:
  void check_sample(const MultispectralSample& sample) const;

  ModelConfig config_;
  nn::ParameterSet<T> params_;
  nn::Linear<T> patch_embed_;
  nn::Mlp<T> g_srf_;
  nn::Mlp<T> g_gsd_;
  nn::Tensor<T> enc_pos_;
  nn::Tensor<T> dec_pos_;
  nn::Tensor<T> mask_token_;
  std::vector<nn::TransformerBlock<T>> encoder_;
  nn::LayerNorm<T> enc_norm_;
  std::vector<nn::TransformerBlock<T>> decoder_;
  nn::LayerNorm<T> dec_norm_;
  nn::Linear<T> head_;
};

/// Mean |reconstruction - target| over the masked tokens' pixels.
template <typename T>
nn::Tensor<T> masked_mae_loss(const nn::Tensor<T>& reconstruction, const nn::Tensor<T>& target,
                              const MaskRecord& mask);

}  // namespace senpa
