#pragma once

#include <span>
#include <vector>

#include "mssda/errors.hpp"

namespace mssda::latent {

/// n points of dimension `dim`, row-major.
struct Points {
  std::size_t dim = 0;
  std::vector<double> values;

  Points() = default;
  explicit Points(std::size_t d) : dim(d) {}
  Points(std::size_t d, std::vector<double> v) : dim(d), values(std::move(v)) {
    if (d == 0 || values.size() % d != 0) throw InputError("points: length is not a multiple of dim");
  }

  std::size_t size() const { return dim ? values.size() / dim : 0; }
  bool empty() const { return size() == 0; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
  void push_back(std::span<const double> p) {
    if (p.size() != dim) throw InputError("points: wrong point dimension");
    values.insert(values.end(), p.begin(), p.end());
  }

  Points subset(std::span<const std::size_t> idx) const {
    Points out(dim);
    out.values.reserve(idx.size() * dim);
    for (auto i : idx) out.push_back(row(i));
    return out;
  }
};

}  // namespace mssda::latent
