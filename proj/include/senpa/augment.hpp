#pragma once

// Spectral superposition and resolution augmentation. Both rewrite pixels and
// the channel's (SRF, GSD) together so the augmented channel remains the
// output of a realisable virtual sensor.

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "senpa/rng.hpp"
#include "senpa/sample.hpp"

namespace senpa {

struct AugmentConfig {
  double p_mix = 0.25;
  double p_down = 0.25;
  std::vector<double> gsd_choices{5, 10, 15, 20, 30};
  /// Allowed numbers of source channels per mix, drawn uniformly.
  std::vector<std::size_t> mix_arity{2, 3};

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// Replaces channel `target` by sum_i alphas[i] * channel(sources[i]); the SRF
/// becomes the same convex combination and the GSD the maximum source GSD.
/// Sources are read from `source` (the pre-augmentation sample).
void mix_channel(MultispectralSample& sample, const MultispectralSample& source,
                 std::size_t target, std::span<const std::size_t> sources,
                 std::span<const double> alphas);

/// Degrades channel `c` to `gsd_target` with apply_gsd and records the new GSD.
void degrade_channel(MultispectralSample& sample, std::size_t c, double gsd_target);

MultispectralSample spectral_superposition(const MultispectralSample& sample,
                                           const AugmentConfig& config, Rng& rng);

MultispectralSample resolution_augment(const MultispectralSample& sample,
                                       const AugmentConfig& config, Rng& rng);

/// spectral_superposition followed by resolution_augment.
MultispectralSample augment(const MultispectralSample& sample, const AugmentConfig& config,
                            Rng& rng);

}  // namespace senpa
