#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mssda/errors.hpp"
#include "mssda/latent/points.hpp"

namespace mssda::latent {

/// Two-component PCA. Components are unit-norm, mutually orthogonal, and
/// signed so their largest-magnitude entry is positive.
struct PcaModel {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // 2 x D
  std::vector<double> explained_variance;       // population variance along each component
  bool degenerate = false;                      // input rank < 2

  std::vector<double> transform(std::span<const double> x) const {
    std::vector<double> out(components.size(), 0.0);
    for (std::size_t k = 0; k < components.size(); ++k) {
      for (std::size_t j = 0; j < mean.size(); ++j) out[k] += (x[j] - mean[j]) * components[k][j];
    }
    return out;
  }

  Points transform(const Points& pts) const {
    Points out(components.size());
    out.values.reserve(pts.size() * components.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out.push_back(transform(pts.row(i)));
    return out;
  }

  std::vector<double> inverse_transform(std::span<const double> z) const {
    std::vector<double> out(mean);
    for (std::size_t k = 0; k < components.size(); ++k) {
      for (std::size_t j = 0; j < mean.size(); ++j) out[j] += z[k] * components[k][j];
    }
    return out;
  }
};

inline PcaModel fit_pca(const Points& pts, std::size_t n_components = 2) {
  const std::size_t n = pts.size(), d = pts.dim;
  if (n < 3) throw InputError("fit_pca: need at least 3 points, got " + std::to_string(n));
  if (d < n_components) throw InputError("fit_pca: dimension smaller than component count");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = pts.values[i * d + j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw InputError("fit_pca: eigendecomposition failed");

  PcaModel m;
  m.mean.assign(mu.data(), mu.data() + d);
  const auto& evals = solver.eigenvalues();  // ascending
  const auto& evecs = solver.eigenvectors();
  const double top = std::max(evals(d - 1), 0.0);
  for (std::size_t k = 0; k < n_components; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);
    std::vector<double> v(evecs.col(col).data(), evecs.col(col).data() + d);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[arg]) + 1e-12) arg = j;
    }
    if (v[arg] < 0) {
      for (auto& e : v) e = -e;
    }
    double var = std::max(evals(col), 0.0);
    if (var <= 1e-12 * top) var = 0.0;
    m.components.push_back(std::move(v));
    m.explained_variance.push_back(var);
  }
  // Rank < 2: the eigensolver's trailing vector is already an orthonormal completion.
  m.degenerate = n_components >= 2 && m.explained_variance[1] == 0.0;
  return m;
}

}  // namespace mssda::latent
