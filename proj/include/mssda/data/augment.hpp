#pragma once

#include <cmath>
#include <vector>

#include "mssda/data/dataset.hpp"
#include "mssda/errors.hpp"
#include "mssda/random.hpp"

namespace mssda::data {

/// Weak time-series augmentations applied in order: additive jitter,
/// per-channel scaling, contiguous time mask.
struct AugmentPolicy {
  double jitter = 0.05;  // noise sd as a fraction of the sample's per-channel std
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  double mask_fraction = 0.1;

  static AugmentPolicy identity() { return {0.0, 1.0, 1.0, 0.0}; }

  void validate() const {
    if (!(jitter >= 0.0)) throw ConfigError("augment: jitter must be >= 0");
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) throw ConfigError("augment: need 0 < scale_lo <= scale_hi");
    if (!(mask_fraction >= 0.0 && mask_fraction <= 0.5)) throw ConfigError("augment: mask_fraction must be in [0, 0.5]");
  }
};

inline std::vector<double> augment_values(std::span<const double> values, std::size_t time_len, std::size_t channels,
                                          const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  std::vector<double> out(values.begin(), values.end());
  if (policy.jitter > 0.0) {
    for (std::size_t c = 0; c < channels; ++c) {
      double m = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < time_len; ++t) m += out[t * channels + c];
      m /= static_cast<double>(time_len);
      for (std::size_t t = 0; t < time_len; ++t) sq += (out[t * channels + c] - m) * (out[t * channels + c] - m);
      const double sd = std::sqrt(sq / static_cast<double>(time_len)) * policy.jitter;
      for (std::size_t t = 0; t < time_len; ++t) out[t * channels + c] += sd * rng.normal();
    }
  }
  if (policy.scale_lo != 1.0 || policy.scale_hi != 1.0) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double s = rng.uniform(policy.scale_lo, policy.scale_hi);
      for (std::size_t t = 0; t < time_len; ++t) out[t * channels + c] *= s;
    }
  }
  const auto masked = static_cast<std::size_t>(std::llround(policy.mask_fraction * static_cast<double>(time_len)));
  if (masked > 0) {
    const std::size_t start = rng.index(time_len - masked + 1);
    for (std::size_t t = start; t < start + masked; ++t) {
      for (std::size_t c = 0; c < channels; ++c) out[t * channels + c] = 0.0;
    }
  }
  return out;
}

inline Sample augment(const Sample& s, std::size_t time_len, std::size_t channels, const AugmentPolicy& policy,
                      Rng& rng) {
  Sample out = s;
  out.values = augment_values(s.values, time_len, channels, policy, rng);
  return out;
}

}  // namespace mssda::data
