#include "senpa/model.hpp"

#include <algorithm>
#include <cmath>

#include "senpa/error.hpp"

namespace senpa {

using nn::Tensor;

std::string to_string(EncodingMode mode) {
  switch (mode) {
    case EncodingMode::Base: return "base";
    case EncodingMode::Spe1: return "spe1";
    case EncodingMode::Spe2: return "spe2";
  }
  return "?";
}

EncodingMode parse_encoding_mode(const std::string& text) {
  if (text == "base") return EncodingMode::Base;
  if (text == "spe1") return EncodingMode::Spe1;
  if (text == "spe2") return EncodingMode::Spe2;
  throw ConfigError("unknown encoding mode '" + text + "' (expected base, spe1 or spe2)");
}

void ModelConfig::validate() const {
  require(d_emb > 0 && patch > 0 && image_size > 0, "model dimensions must be positive");
  require(image_size % patch == 0, "image_size " + std::to_string(image_size) +
                                       " is not divisible by patch " + std::to_string(patch));
  require(enc_layers > 0 && dec_layers > 0, "encoder and decoder need at least one layer");
  require(enc_heads > 0 && d_emb % enc_heads == 0, "d_emb must be divisible by enc_heads");
  require(dec_heads > 0 && d_emb % dec_heads == 0, "d_emb must be divisible by dec_heads");
  require(r_mask > 0.0 && r_mask < 1.0, "r_mask must lie in (0, 1)");
  require(srf_dim == kSrfLength, "srf_dim must be " + std::to_string(kSrfLength));
  require(mlp_depth >= 1 && mlp_ratio >= 1, "mlp depth and ratio must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(gsd_scale > 0.0, "gsd_scale must be positive");
  require(max_channels > 0, "max_channels must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_emb", c.d_emb},         {"patch", c.patch},         {"image_size", c.image_size},
       {"max_channels", c.max_channels},
       {"enc_layers", c.enc_layers}, {"enc_heads", c.enc_heads}, {"dec_layers", c.dec_layers},
       {"dec_heads", c.dec_heads},   {"mode", to_string(c.mode)}, {"r_mask", c.r_mask},
       {"srf_dim", c.srf_dim},       {"mlp_depth", c.mlp_depth}, {"mlp_ratio", c.mlp_ratio},
       {"dropout", c.dropout},       {"gsd_scale", c.gsd_scale}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.d_emb = j.value("d_emb", c.d_emb);
  c.patch = j.value("patch", c.patch);
  c.image_size = j.value("image_size", c.image_size);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.enc_heads = j.value("enc_heads", c.enc_heads);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.dec_heads = j.value("dec_heads", c.dec_heads);
  c.mode = parse_encoding_mode(j.value("mode", to_string(c.mode)));
  c.r_mask = j.value("r_mask", c.r_mask);
  c.srf_dim = j.value("srf_dim", c.srf_dim);
  c.mlp_depth = j.value("mlp_depth", c.mlp_depth);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.dropout = j.value("dropout", c.dropout);
  c.gsd_scale = j.value("gsd_scale", c.gsd_scale);
  c.validate();
}

std::size_t mask_count(std::size_t n, double r_mask) {
  require(n >= 2, "masking needs at least two tokens");
  require(r_mask > 0.0 && r_mask < 1.0, "r_mask must lie in (0, 1)");
  const auto k = static_cast<std::size_t>(std::llround(r_mask * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

MaskRecord MaskRecord::from_masked(std::size_t tokens, std::vector<std::size_t> masked) {
  MaskRecord rec;
  rec.tokens = tokens;
  rec.is_masked.assign(tokens, 0);
  for (std::size_t t : masked) {
    require(t < tokens, "masked token index out of range");
    require(!rec.is_masked[t], "masked token listed twice");
    rec.is_masked[t] = 1;
  }
  require(!masked.empty() && masked.size() < tokens,
          "a mask must hide at least one token and keep at least one visible");
  for (std::size_t t = 0; t < tokens; ++t)
    (rec.is_masked[t] ? rec.masked : rec.visible).push_back(t);
  return rec;
}

MaskRecord random_mask(std::size_t n, double r_mask, Rng& rng) {
  return MaskRecord::from_masked(n, sample_distinct(rng, n, mask_count(n, r_mask)));
}

std::vector<std::size_t> tap_layers(std::size_t enc_layers) {
  std::vector<std::size_t> taps;
  for (std::size_t j = 1; j <= 4; ++j) taps.push_back((enc_layers * j + 3) / 4);
  return taps;
}

std::size_t frozen_layer_count(std::size_t enc_layers) { return (2 * enc_layers + 2) / 3; }

template <typename T>
std::vector<T> patchify(const MultispectralSample& sample, std::size_t patch) {
  require(sample.height % patch == 0 && sample.width % patch == 0,
          "sample " + std::to_string(sample.height) + "x" + std::to_string(sample.width) +
              " is not divisible by patch " + std::to_string(patch));
  const std::size_t gh = sample.height / patch, gw = sample.width / patch;
  const std::size_t pp = patch * patch;
  std::vector<T> out(sample.channels() * gh * gw * pp);
  for (std::size_t c = 0; c < sample.channels(); ++c) {
    const auto img = sample.channel(c);
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j) {
        T* row = out.data() + ((c * gh + i) * gw + j) * pp;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            row[y * patch + x] = static_cast<T>(img[(i * patch + y) * sample.width + j * patch + x]);
      }
  }
  return out;
}

template <typename T>
std::vector<T> unpatchify(std::span<const T> patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t patch) {
  require(height % patch == 0 && width % patch == 0, "unpatchify: shape not divisible by patch");
  require(patches.size() == channels * height * width, "unpatchify: size mismatch");
  const std::size_t gh = height / patch, gw = width / patch;
  const std::size_t pp = patch * patch;
  std::vector<T> out(channels * height * width);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j) {
        const T* row = patches.data() + ((c * gh + i) * gw + j) * pp;
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            out[(c * height + i * patch + y) * width + j * patch + x] = row[y * patch + x];
      }
  return out;
}

template <typename T>
SenpaMae<T>::SenpaMae(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(seed) {
  config_.validate();
  const std::size_t d = config_.d_emb;
  const std::size_t pos_rows =
      config_.mode == EncodingMode::Base ? config_.max_channels * config_.positions()
                                         : config_.positions();
  const T drop = static_cast<T>(config_.dropout);
  patch_embed_ = nn::Linear<T>(params_, "patch_embed", config_.patch * config_.patch, d);
  g_srf_ = nn::Mlp<T>(params_, "g_srf", config_.srf_dim, d, d, config_.mlp_depth);
  g_gsd_ = nn::Mlp<T>(params_, "g_gsd", 1, d, d, config_.mlp_depth);
  enc_pos_ = params_.add("enc_pos", pos_rows, d, nn::Init::TruncatedNormal, false);
  for (std::size_t l = 0; l < config_.enc_layers; ++l)
    encoder_.emplace_back(params_, "encoder." + std::to_string(l), d, config_.enc_heads,
                          config_.mlp_ratio, drop);
  enc_norm_ = nn::LayerNorm<T>(params_, "enc_norm", d);
  mask_token_ = params_.add("mask_token", 1, d, nn::Init::TruncatedNormal, false);
  dec_pos_ = params_.add("dec_pos", pos_rows, d, nn::Init::TruncatedNormal, false);
  for (std::size_t l = 0; l < config_.dec_layers; ++l)
    decoder_.emplace_back(params_, "decoder." + std::to_string(l), d, config_.dec_heads,
                          config_.mlp_ratio, drop);
  dec_norm_ = nn::LayerNorm<T>(params_, "dec_norm", d);
  head_ = nn::Linear<T>(params_, "head", d, config_.patch * config_.patch);
}

template <typename T>
void SenpaMae<T>::check_sample(const MultispectralSample& sample) const {
  require(sample.channels() >= 1, "sample has no channels");
  require(sample.height == config_.image_size && sample.width == config_.image_size,
          "sample is " + std::to_string(sample.height) + "x" + std::to_string(sample.width) +
              " but the model expects " + std::to_string(config_.image_size) + "x" +
              std::to_string(config_.image_size));
  if (config_.mode == EncodingMode::Base)
    require(sample.channels() <= config_.max_channels,
            "Base mode supports at most max_channels = " + std::to_string(config_.max_channels) +
                " channels");
}

template <typename T>
Tensor<T> SenpaMae<T>::patchify_embed(const MultispectralSample& sample) const {
  check_sample(sample);
  const std::size_t n = config_.tokens(sample.channels());
  const std::size_t pp = config_.patch * config_.patch;
  return patch_embed_(Tensor<T>::from_values(n, pp, patchify<T>(sample, config_.patch)));
}

template <typename T>
Tensor<T> SenpaMae<T>::sensor_encoding(std::span<const ChannelParams> params) const {
  const std::size_t c = params.size();
  std::vector<T> srf(c * config_.srf_dim);
  std::vector<T> gsd(c);
  for (std::size_t i = 0; i < c; ++i) {
    const auto v = params[i].srf.values();
    std::transform(v.begin(), v.end(), srf.begin() + static_cast<std::ptrdiff_t>(i * config_.srf_dim),
                   [](float x) { return static_cast<T>(x); });
    gsd[i] = static_cast<T>(static_cast<double>(params[i].gsd_m) / config_.gsd_scale);
  }
  return nn::add(g_srf_(Tensor<T>::from_values(c, config_.srf_dim, std::move(srf))),
                 g_gsd_(Tensor<T>::from_values(c, 1, std::move(gsd))));
}

template <typename T>
Tensor<T> SenpaMae<T>::positional_encoding(std::size_t channels, bool decoder) const {
  const std::size_t g = config_.positions();
  std::vector<std::size_t> index(channels * g);
  const bool base = config_.mode == EncodingMode::Base;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t s = 0; s < g; ++s) index[c * g + s] = base ? c * g + s : s;
  return nn::gather_rows(decoder ? dec_pos_ : enc_pos_, std::span<const std::size_t>(index));
}

namespace {

// Row index of each token's channel: c for token c * G + s.
std::vector<std::size_t> channel_of_token(std::size_t channels, std::size_t positions) {
  std::vector<std::size_t> index(channels * positions);
  for (std::size_t c = 0; c < channels; ++c)
    std::fill_n(index.begin() + static_cast<std::ptrdiff_t>(c * positions), positions, c);
  return index;
}

}  // namespace

template <typename T>
Tensor<T> SenpaMae<T>::encode_sensor_params(const Tensor<T>& tokens,
                                            std::span<const ChannelParams> params) const {
  require(config_.mode != EncodingMode::Base, "sensor parameter encoding is disabled in Base mode");
  const std::size_t c = params.size();
  require(tokens.rows() == config_.tokens(c), "token count does not match the channel count");
  const auto index = channel_of_token(c, config_.positions());
  const Tensor<T> per_token =
      nn::gather_rows(sensor_encoding(params), std::span<const std::size_t>(index));
  return nn::add(nn::add(tokens, positional_encoding(c)), per_token);
}

template <typename T>
Tensor<T> SenpaMae<T>::encode_base(const Tensor<T>& tokens, std::size_t channels) const {
  require(config_.mode == EncodingMode::Base, "channel-indexed encoding is only used in Base mode");
  require(channels <= config_.max_channels, "too many channels for the Base positional table");
  require(tokens.rows() == config_.tokens(channels), "token count does not match the channel count");
  return nn::add(tokens, positional_encoding(channels));
}

template <typename T>
Tensor<T> SenpaMae<T>::encode_input(const MultispectralSample& sample) const {
  const Tensor<T> tokens = patchify_embed(sample);
  if (config_.mode == EncodingMode::Base) return encode_base(tokens, sample.channels());
  return encode_sensor_params(tokens, sample.params);
}

template <typename T>
std::vector<Tensor<T>> SenpaMae<T>::encoder_blocks(const Tensor<T>& tokens, Rng* dropout_rng) const {
  std::vector<Tensor<T>> outs;
  Tensor<T> h = tokens;
  for (const auto& block : encoder_) {
    h = block(h, dropout_rng);
    outs.push_back(h);
  }
  return outs;
}

template <typename T>
MaeOutput<T> SenpaMae<T>::forward_mae(const MultispectralSample& sample, Rng& rng,
                                      const MaskRecord* fixed_mask) const {
  const std::size_t c = sample.channels();
  const std::size_t n = config_.tokens(c);
  const std::size_t pp = config_.patch * config_.patch;
  MaeOutput<T> out;
  out.target = Tensor<T>::from_values(n, pp, patchify<T>(sample, config_.patch));

  Tensor<T> tokens = encode_input(sample);
  if (fixed_mask) {
    require(fixed_mask->tokens == n, "fixed mask has the wrong token count");
    out.mask = *fixed_mask;
  } else {
    out.mask = random_mask(n, config_.r_mask, rng);
  }
  const MaskRecord& mask = out.mask;
  Rng* drop_rng = config_.dropout > 0.0 ? &rng : nullptr;

  Tensor<T> visible = nn::gather_rows(tokens, std::span<const std::size_t>(mask.visible));
  out.encoder_output = enc_norm_(encoder_blocks(visible, drop_rng).back());

  // Rows [0, V) of `pool` are the encoded visible tokens, row V is the mask
  // token; slot_map puts every token back at its original position.
  const std::size_t v = mask.visible.size();
  const Tensor<T> pool = nn::concat_rows(out.encoder_output, mask_token_);
  std::vector<std::size_t> slot_map(n, v);
  for (std::size_t i = 0; i < v; ++i) slot_map[mask.visible[i]] = i;
  Tensor<T> dec = nn::gather_rows(pool, std::span<const std::size_t>(slot_map));
  dec = nn::add(dec, positional_encoding(c, true));
  if (config_.mode == EncodingMode::Spe2) {
    const auto index = channel_of_token(c, config_.positions());
    dec = nn::add(dec, nn::gather_rows(sensor_encoding(sample.params),
                                       std::span<const std::size_t>(index)));
  }
  out.decoder_input = dec;
  for (const auto& block : decoder_) dec = block(dec, drop_rng);
  out.reconstruction = head_(dec_norm_(dec));
  return out;
}

template <typename T>
std::vector<Tensor<T>> SenpaMae<T>::forward_features(const MultispectralSample& sample,
                                                     std::span<const std::size_t> taps) const {
  for (std::size_t t : taps)
    require(t >= 1 && t <= config_.enc_layers,
            "tap layer " + std::to_string(t) + " outside 1.." + std::to_string(config_.enc_layers));
  const auto outs = encoder_blocks(encode_input(sample), nullptr);
  std::vector<Tensor<T>> features;
  for (std::size_t t : taps) features.push_back(outs[t - 1]);
  return features;
}

template <typename T>
std::vector<std::string> SenpaMae<T>::frozen_prefixes() const {
  std::vector<std::string> prefixes{"patch_embed.", "g_srf.", "g_gsd.", "enc_pos"};
  const std::size_t frozen = frozen_layer_count(config_.enc_layers);
  for (std::size_t l = 0; l < frozen; ++l) prefixes.push_back("encoder." + std::to_string(l) + ".");
  return prefixes;
}

template <typename T>
Tensor<T> masked_mae_loss(const Tensor<T>& reconstruction, const Tensor<T>& target,
                          const MaskRecord& mask) {
  require(reconstruction.rows() == target.rows() && reconstruction.cols() == target.cols(),
          "reconstruction and target shapes differ");
  require(mask.tokens == reconstruction.rows(), "mask record does not match the token count");
  require(!mask.masked.empty(), "masked loss needs at least one masked token");
  const std::span<const std::size_t> rows(mask.masked);
  return nn::mean(nn::abs(nn::sub(nn::gather_rows(reconstruction, rows), nn::gather_rows(target, rows))));
}

template class SenpaMae<float>;
template class SenpaMae<double>;
template std::vector<float> patchify<float>(const MultispectralSample&, std::size_t);
template std::vector<double> patchify<double>(const MultispectralSample&, std::size_t);
template std::vector<float> unpatchify<float>(std::span<const float>, std::size_t, std::size_t,
                                              std::size_t, std::size_t);
template std::vector<double> unpatchify<double>(std::span<const double>, std::size_t, std::size_t,
                                                std::size_t, std::size_t);
template Tensor<float> masked_mae_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                              const MaskRecord&);
template Tensor<double> masked_mae_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                const MaskRecord&);

}  // namespace senpa
