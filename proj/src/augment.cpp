#include "senpa/augment.hpp"

#include <algorithm>

#include "senpa/error.hpp"
#include "senpa/scene.hpp"

namespace senpa {

void AugmentConfig::validate() const {
  require(p_mix >= 0.0 && p_mix <= 1.0, "p_mix must lie in [0, 1]");
  require(p_down >= 0.0 && p_down <= 1.0, "p_down must lie in [0, 1]");
  for (std::size_t i = 0; i < gsd_choices.size(); ++i) {
    require(gsd_choices[i] > 0.0, "gsd_choices must be positive");
    if (i > 0) require(gsd_choices[i] > gsd_choices[i - 1], "gsd_choices must be strictly increasing");
  }
  require(!mix_arity.empty(), "mix_arity must not be empty");
  for (auto k : mix_arity) require(k == 2 || k == 3, "mix_arity entries must be 2 or 3");
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"p_mix", c.p_mix}, {"p_down", c.p_down}, {"gsd_choices", c.gsd_choices},
       {"mix_arity", c.mix_arity}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  c = AugmentConfig{};
  c.p_mix = j.value("p_mix", c.p_mix);
  c.p_down = j.value("p_down", c.p_down);
  c.gsd_choices = j.value("gsd_choices", c.gsd_choices);
  c.mix_arity = j.value("mix_arity", c.mix_arity);
  c.validate();
}

void mix_channel(MultispectralSample& sample, const MultispectralSample& source,
                 std::size_t target, std::span<const std::size_t> sources,
                 std::span<const double> alphas) {
  require(target < sample.channels(), "mix target out of range");
  require(sources.size() == alphas.size(), "mix needs one coefficient per source");
  std::vector<std::pair<SpectralResponseFunction, double>> parts;
  float gsd = 0.0f;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    require(sources[i] < source.channels(), "mix source out of range");
    parts.emplace_back(source.params[sources[i]].srf, alphas[i]);
    gsd = std::max(gsd, source.params[sources[i]].gsd_m);
  }
  // Validates arity and the simplex constraint.
  SpectralResponseFunction srf = superpose_srf_k(parts, parts.size());

  auto out = sample.channel(target);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sources.size(); ++i)
      acc += alphas[i] * static_cast<double>(source.channel(sources[i])[p]);
    out[p] = static_cast<float>(acc);
  }
  sample.params[target] = {std::move(srf), gsd};
}

void degrade_channel(MultispectralSample& sample, std::size_t c, double gsd_target) {
  require(c < sample.channels(), "channel out of range");
  auto px = sample.channel(c);
  Image img{sample.height, sample.width, std::vector<double>(px.begin(), px.end())};
  const Image out = apply_gsd(img, sample.params[c].gsd_m, gsd_target);
  for (std::size_t p = 0; p < px.size(); ++p) px[p] = static_cast<float>(out.data[p]);
  sample.params[c].gsd_m = static_cast<float>(gsd_target);
}

MultispectralSample spectral_superposition(const MultispectralSample& sample,
                                           const AugmentConfig& config, Rng& rng) {
  config.validate();
  const std::size_t channels = sample.channels();
  if (config.p_mix > 0.0)
    require(channels >= 2, "spectral superposition needs at least two channels");
  MultispectralSample out = sample;
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(uniform01(rng) < config.p_mix)) continue;
    std::size_t k = config.mix_arity[uniform_index(rng, config.mix_arity.size())];
    k = std::min(k, channels);
    const auto sources = sample_distinct(rng, channels, k);
    const auto alphas = sample_simplex(rng, k);
    mix_channel(out, sample, c, sources, alphas);
  }
  return out;
}

MultispectralSample resolution_augment(const MultispectralSample& sample,
                                       const AugmentConfig& config, Rng& rng) {
  config.validate();
  MultispectralSample out = sample;
  for (std::size_t c = 0; c < sample.channels(); ++c) {
    if (!(uniform01(rng) < config.p_down)) continue;
    std::vector<double> candidates;
    for (double g : config.gsd_choices)
      if (g > sample.params[c].gsd_m) candidates.push_back(g);
    if (candidates.empty()) continue;
    degrade_channel(out, c, candidates[uniform_index(rng, candidates.size())]);
  }
  return out;
}

MultispectralSample augment(const MultispectralSample& sample, const AugmentConfig& config,
                            Rng& rng) {
  return resolution_augment(spectral_superposition(sample, config, rng), config, rng);
}

}  // namespace senpa
