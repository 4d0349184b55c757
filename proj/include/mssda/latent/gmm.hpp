#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/latent/points.hpp"
#include "mssda/random.hpp"

namespace mssda::latent {

struct GmmOptions {
  std::size_t restarts = 5;
  std::size_t max_iterations = 500;
  double tolerance = 1e-6;  // on the change of mean per-point log-likelihood
  double ridge = 1e-6;      // added to every covariance diagonal
};

/// Full-covariance Gaussian mixture.
struct GmmModel {
  std::size_t dim = 0;
  std::vector<double> weights;
  std::vector<std::vector<double>> means;  // K x dim
  std::vector<std::vector<double>> covs;   // K x (dim*dim), row-major, SPD
  double log_likelihood = -std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // total log-likelihood at the seed and after each EM iteration (kept restart)

  std::size_t components() const { return weights.size(); }
};

namespace detail {

// Cholesky factors of each component covariance, cached for density evaluation.
struct ComponentCache {
  std::vector<double> chol;  // lower triangle, dim*dim
  double log_norm = 0.0;     // log pi_k - 0.5*(d log 2pi + log|Sigma|)
};

inline bool cholesky(std::span<const double> a, std::size_t d, std::vector<double>& l) {
  l.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(s > 0.0)) return false;
        l[i * d + i] = std::sqrt(s);
      } else {
        l[i * d + j] = s / l[j * d + j];
      }
    }
  }
  return true;
}

inline std::vector<ComponentCache> build_cache(const GmmModel& m) {
  const std::size_t d = m.dim;
  std::vector<ComponentCache> cache(m.components());
  for (std::size_t k = 0; k < m.components(); ++k) {
    if (!cholesky(m.covs[k], d, cache[k].chol)) {
      throw InputError("gmm: covariance of component " + std::to_string(k) + " is not positive definite");
    }
    double logdet = 0.0;
    for (std::size_t i = 0; i < d; ++i) logdet += 2.0 * std::log(cache[k].chol[i * d + i]);
    cache[k].log_norm = std::log(m.weights[k]) - 0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + logdet);
  }
  return cache;
}

inline std::vector<double> global_covariance(const Points& pts, double ridge) {
  const std::size_t n = pts.size(), d = pts.dim;
  std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += pts.values[i * d + j] / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        cov[a * d + b] += (pts.values[i * d + a] - mean[a]) * (pts.values[i * d + b] - mean[b]) / static_cast<double>(n);
      }
    }
  }
  for (std::size_t a = 0; a < d; ++a) cov[a * d + a] += ridge;
  return cov;
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// k-means++ seeding: first center uniform, the rest with probability proportional to squared distance.
inline std::vector<std::vector<double>> kmeanspp(const Points& pts, std::size_t k, Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::vector<double>> centers;
  auto first = pts.row(rng.index(n));
  centers.emplace_back(first.begin(), first.end());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(pts.row(i), centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r < 0.0) break;
      }
    }
    auto c = pts.row(pick);
    centers.emplace_back(c.begin(), c.end());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(pts.row(i), centers.back()));
  }
  return centers;
}

// E-step; fills responsibilities (n x K) and returns the total log-likelihood.
// Component parameters are flattened once; each row holds log joints, then
// their shifted exponentials, then posteriors.
inline double expectation(const GmmModel& m, const Points& pts, std::vector<double>& resp) {
  const auto cache = build_cache(m);
  const std::size_t n = pts.size(), k = m.components(), d = m.dim;
  std::vector<double> mean(k * d), chol(k * d * d), inv_diag(k * d), norm(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(m.means[c].begin(), m.means[c].end(), mean.begin() + static_cast<std::ptrdiff_t>(c * d));
    std::copy(cache[c].chol.begin(), cache[c].chol.end(), chol.begin() + static_cast<std::ptrdiff_t>(c * d * d));
    for (std::size_t j = 0; j < d; ++j) inv_diag[c * d + j] = 1.0 / cache[c].chol[j * d + j];
    norm[c] = cache[c].log_norm;
  }
  resp.resize(n * k);
  std::vector<double> z(d);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = pts.values.data() + i * d;
    double* row = resp.data() + i * k;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double* mu = mean.data() + c * d;
      const double* l = chol.data() + c * d * d;
      double maha = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        double v = x[a] - mu[a];
        for (std::size_t b = 0; b < a; ++b) v -= l[a * d + b] * z[b];
        z[a] = v * inv_diag[c * d + a];
        maha += z[a] * z[a];
      }
      row[c] = norm[c] - 0.5 * maha;
      top = std::max(top, row[c]);
    }
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      row[c] = std::exp(row[c] - top);
      s += row[c];
    }
    total += top + std::log(s);
    const double inv = 1.0 / s;
    for (std::size_t c = 0; c < k; ++c) row[c] *= inv;
  }
  return total;
}

// Two passes over the data, each accumulating every component at once:
// weights and means first, then covariances around the new means.
inline void maximization(GmmModel& m, const Points& pts, const std::vector<double>& resp, double ridge) {
  const std::size_t n = pts.size(), k = m.components(), d = m.dim;
  std::vector<double> nk(k, 0.0), mu(k * d, 0.0), cov(k * d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = pts.values.data() + i * d;
    const double* r = resp.data() + i * k;
    for (std::size_t c = 0; c < k; ++c) {
      nk[c] += r[c];
      for (std::size_t j = 0; j < d; ++j) mu[c * d + j] += r[c] * x[j];
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (nk[c] < 1e-10) continue;
    for (std::size_t j = 0; j < d; ++j) mu[c * d + j] /= nk[c];
  }
  std::vector<double> dx(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = pts.values.data() + i * d;
    const double* r = resp.data() + i * k;
    for (std::size_t c = 0; c < k; ++c) {
      if (r[c] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) dx[j] = x[j] - mu[c * d + j];
      double* cc = cov.data() + c * d * d;
      for (std::size_t a = 0; a < d; ++a) {
        const double ra = r[c] * dx[a];
        for (std::size_t b = 0; b <= a; ++b) cc[a * d + b] += ra * dx[b];
      }
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (nk[c] < 1e-10) continue;  // starved component keeps its previous parameters
    std::vector<double> full(d * d);
    const double* cc = cov.data() + c * d * d;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        full[a * d + b] = cc[a * d + b] / nk[c];
        full[b * d + a] = full[a * d + b];
      }
      full[a * d + a] += ridge;
    }
    m.weights[c] = nk[c] / static_cast<double>(n);
    m.means[c].assign(mu.begin() + static_cast<std::ptrdiff_t>(c * d), mu.begin() + static_cast<std::ptrdiff_t>((c + 1) * d));
    m.covs[c] = std::move(full);
  }
  double wsum = 0.0;
  for (double w : m.weights) wsum += w;
  for (auto& w : m.weights) w = std::max(w / wsum, 1e-300);
}

inline GmmModel fit_once(const Points& pts, std::size_t k, Rng& rng, const GmmOptions& opt) {
  GmmModel m;
  m.dim = pts.dim;
  m.means = kmeanspp(pts, k, rng);
  m.covs.assign(k, global_covariance(pts, opt.ridge));
  m.weights.assign(k, 1.0 / static_cast<double>(k));
  const double n = static_cast<double>(pts.size());
  std::vector<double> resp;
  double ll = expectation(m, pts, resp);
  m.trace.push_back(ll);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    maximization(m, pts, resp, opt.ridge);
    const double next = expectation(m, pts, resp);
    m.trace.push_back(next);
    m.iterations = it + 1;
    const double delta = (next - ll) / n;
    ll = next;
    if (std::abs(delta) < opt.tolerance) {
      m.converged = true;
      break;
    }
  }
  m.log_likelihood = ll;
  return m;
}

}  // namespace detail

/// EM from `restarts` k-means++ seeds; keeps the restart with the highest
/// final log-likelihood (earliest restart on ties).
inline GmmModel fit_gmm(const Points& pts, std::size_t k, std::uint64_t seed, const GmmOptions& opt = {}) {
  if (k < 1) throw InputError("fit_gmm: K must be >= 1");
  if (k > pts.size()) {
    throw InputError("fit_gmm: K=" + std::to_string(k) + " exceeds the number of points " + std::to_string(pts.size()));
  }
  const Rng root(seed);
  GmmModel best;
  for (std::size_t r = 0; r < std::max<std::size_t>(opt.restarts, 1); ++r) {
    Rng rng = root.fork(r);
    GmmModel m = detail::fit_once(pts, k, rng, opt);
    if (best.weights.empty() || m.log_likelihood > best.log_likelihood) best = std::move(m);
  }
  return best;
}

inline double log_likelihood(const GmmModel& m, const Points& pts) {
  std::vector<double> resp;
  return detail::expectation(m, pts, resp);
}

/// Posterior component probabilities, n x K row-major.
inline std::vector<double> responsibilities(const GmmModel& m, const Points& pts) {
  std::vector<double> resp;
  detail::expectation(m, pts, resp);
  return resp;
}

inline std::size_t free_parameters(std::size_t k, std::size_t dim) {
  return (k - 1) + k * dim + k * dim * (dim + 1) / 2;
}

/// -2 ln L + p ln m, with p free parameters and m points.
inline double bic_value(double log_likelihood, std::size_t free_params, std::size_t n_points) {
  return -2.0 * log_likelihood + static_cast<double>(free_params) * std::log(static_cast<double>(n_points));
}

inline double bic(const GmmModel& m, const Points& pts) {
  return bic_value(log_likelihood(m, pts), free_parameters(m.components(), m.dim), pts.size());
}

struct BicRow {
  std::size_t k = 0;
  double bic = 0.0;
  double log_likelihood = 0.0;
};

struct KSelection {
  std::size_t k = 0;
  GmmModel model;
  std::vector<BicRow> table;
};

/// Fits every K in [k_min, min(k_max, n)] and keeps the BIC minimizer
/// (smaller K on ties). Each K gets its own seed stream.
inline KSelection select_k(const Points& pts, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                           const GmmOptions& opt = {}) {
  if (k_min < 1 || k_min > k_max) throw InputError("select_k: invalid K range");
  if (k_min > pts.size()) throw InputError("select_k: k_min exceeds the number of points");
  k_max = std::min(k_max, pts.size());
  const Rng root(seed);
  KSelection out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    GmmModel m = fit_gmm(pts, k, root.fork(k).bits(), opt);
    const double b = bic_value(m.log_likelihood, free_parameters(k, pts.dim), pts.size());
    out.table.push_back({k, b, m.log_likelihood});
    if (b < best) {
      best = b;
      out.k = k;
      out.model = std::move(m);
    }
  }
  return out;
}

/// Hard labels: argmax responsibility, lowest component index on ties.
inline std::vector<int> assign_components(const GmmModel& m, const Points& pts) {
  const auto resp = responsibilities(m, pts);
  const std::size_t k = m.components();
  std::vector<int> labels(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (resp[i * k + c] > resp[i * k + arg]) arg = c;
    }
    labels[i] = static_cast<int>(arg);
  }
  return labels;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("adjusted_rand_index: labelings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  const int ka = *std::max_element(a.begin(), a.end()) + 1;
  const int kb = *std::max_element(b.begin(), b.end()) + 1;
  std::vector<double> table(static_cast<std::size_t>(ka * kb), 0.0), ra(ka, 0.0), rb(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[static_cast<std::size_t>(a[i] * kb + b[i])] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (double v : table) index += c2(v);
  for (double v : ra) sa += c2(v);
  for (double v : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace mssda::latent
