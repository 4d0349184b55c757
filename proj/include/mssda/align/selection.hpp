#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/latent/points.hpp"

namespace mssda::align {

enum class SelectionStrategy { max_dis, sum_dis, all };

inline const char* to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::max_dis: return "max_dis";
    case SelectionStrategy::sum_dis: return "sum_dis";
    case SelectionStrategy::all: return "all";
  }
  return "?";
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Largest distance from any target point to the center.
inline double domain_distance_max(const latent::Points& target, std::span<const double> center) {
  if (target.empty()) throw InputError("domain_distance_max: no target points");
  double d = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) d = std::max(d, euclidean(target.row(i), center));
  return d;
}

/// Sum of distances from every target point to the center.
inline double domain_distance_sum(const latent::Points& target, std::span<const double> center) {
  if (target.empty()) throw InputError("domain_distance_sum: no target points");
  double d = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) d += euclidean(target.row(i), center);
  return d;
}

struct SelectionResult {
  std::vector<double> distances;
  std::vector<std::size_t> selected;  // ascending distance, lower index first on ties
  SelectionStrategy strategy = SelectionStrategy::max_dis;
};

/// Greedy argmin without replacement over the given per-cluster distances.
/// `all` returns every cluster in that order and ignores m.
inline SelectionResult select_subdomains(std::span<const double> distances, std::size_t m,
                                         SelectionStrategy strategy) {
  const std::size_t k = distances.size();
  if (strategy != SelectionStrategy::all) {
    if (m > k) throw InputError("select_subdomains: M=" + std::to_string(m) + " exceeds K=" + std::to_string(k));
    if (m == 0) throw InputError("select_subdomains: M must be >= 1");
  }
  SelectionResult r{std::vector<double>(distances.begin(), distances.end()), {}, strategy};
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  const std::size_t take = strategy == SelectionStrategy::all ? k : m;
  r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
  return r;
}

}  // namespace mssda::align
