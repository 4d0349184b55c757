#pragma once

// Reference computations written independently of the library code paths
// they check. Slow and direct on purpose: loops over definitions, no reuse of
// library internals.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace oracle {

/// Central differences of a scalar function with respect to every entry of x.
inline std::vector<double> finite_difference(const std::function<double()>& f, std::span<double> x,
                                             double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

using Rows = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// The in-batch contrastive loss written straight from its definition, without
/// any max-shift.
inline double contrastive(const Rows& h, const Rows& ht) {
  const std::size_t n = h.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(dot(h[i], ht[j]));
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) denom += std::exp(dot(h[i], h[j]));
    }
    total += -std::log(std::exp(dot(h[i], ht[i])) / denom);
  }
  return total / static_cast<double>(n);
}

/// Adjusted Rand index by explicit pair enumeration.
inline double ari_pairs(std::span<const int> a, std::span<const int> b) {
  const std::size_t n = a.size();
  double both = 0.0, only_a = 0.0, only_b = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      only_a += sa;
      only_b += sb;
      pairs += 1.0;
    }
  }
  const double expected = only_a * only_b / pairs;
  const double max_index = 0.5 * (only_a + only_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

/// Direct 1-D convolution: x [B, Cin, L], w [Cout, Cin, K], b [Cout].
inline std::vector<double> conv1d(const std::vector<double>& x, std::size_t batch, std::size_t cin, std::size_t len,
                                  const std::vector<double>& w, const std::vector<double>& bias, std::size_t cout,
                                  std::size_t k, std::size_t stride, std::size_t pad, std::size_t& lout) {
  lout = (len + 2 * pad - k) / stride + 1;
  std::vector<double> y(batch * cout * lout, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t p = 0; p < lout; ++p) {
        double s = bias[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t t = 0; t < k; ++t) {
            const long pos = static_cast<long>(p * stride + t) - static_cast<long>(pad);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            s += w[(o * cin + c) * k + t] * x[(n * cin + c) * len + static_cast<std::size_t>(pos)];
          }
        }
        y[(n * cout + o) * lout + p] = s;
      }
    }
  }
  return y;
}

}  // namespace oracle
