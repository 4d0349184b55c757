#pragma once

#include <cmath>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/latent/points.hpp"
#include "mssda/nn/tensor.hpp"

namespace mssda::latent {

/// Per-channel mean and population standard deviation of a feature map.
struct FeatureStats {
  std::vector<double> mu;
  std::vector<double> sigma;

  // [mu || sigma]
  std::vector<double> coords() const {
    std::vector<double> out(mu);
    out.insert(out.end(), sigma.begin(), sigma.end());
    return out;
  }
};

/// `map` is [C, L]; positions play the role of the spatial extent.
inline FeatureStats feature_stats(const nn::Tensor<double>& map) {
  if (map.rank() != 2 || map.size() == 0) throw InputError("feature_stats: expected a non-empty [C, L] map");
  const std::size_t ch = map.dim(0), len = map.dim(1);
  FeatureStats s{std::vector<double>(ch), std::vector<double>(ch)};
  for (std::size_t c = 0; c < ch; ++c) {
    double m = 0.0;
    for (std::size_t l = 0; l < len; ++l) m += map.at(c, l);
    m /= static_cast<double>(len);
    double v = 0.0;
    for (std::size_t l = 0; l < len; ++l) v += (map.at(c, l) - m) * (map.at(c, l) - m);
    s.mu[c] = m;
    s.sigma[c] = std::sqrt(v / static_cast<double>(len));
  }
  return s;
}

inline Points stats_points(const std::vector<FeatureStats>& stats) {
  if (stats.empty()) throw InputError("stats_points: no statistics");
  Points p(2 * stats.front().mu.size());
  for (const auto& s : stats) p.push_back(s.coords());
  return p;
}

}  // namespace mssda::latent
