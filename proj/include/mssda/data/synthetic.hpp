#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/data/dataset.hpp"
#include "mssda/errors.hpp"
#include "mssda/random.hpp"

namespace mssda::data {

/// Multi-domain gait-like generator with planted latent domains.
///
/// For subject s in planted domain d with label y, sample i, channel c:
///   x(t) = g[d][c] * 0.5 * (1 + sin(w t + phi_s + phi_i + 2 pi c / C - lag)) + b[d][c] + noise
///   lag  = (y - 1/2) * class_amplitude * k[d][c]
/// phi_s and phi_i are uniform per-subject and per-sample jitters. The class
/// cue is a phase shift of some channels relative to the others. When T spans
/// whole periods the per-channel mean and std depend only on the style (g, b)
/// and the noise, so latent domains are recoverable without labels.
///
/// Default k: channel c carries cue (c mod 3); cue 0 is the phase reference
/// and cues 1 and 2 shift in opposite directions, in every domain. Labels are
/// skewed per domain: domain d holds round(n_d * pi_d) positives (at least one
/// of each class when n_d >= 2), so domain style is a spurious cue for the
/// label inside the pooled source.
struct SyntheticSpec {
  std::string name = "synthetic";
  std::size_t n_subjects = 20;
  std::size_t samples_per_subject = 12;
  std::size_t time_len = 32;
  std::size_t channels = 4;
  std::size_t n_domains = 3;
  double class_amplitude = 0.3;  // lag between classes, radians
  std::vector<std::vector<double>> gains;    // [domain][channel]; empty = defaults
  std::vector<std::vector<double>> offsets;  // [domain][channel]; empty = defaults
  std::vector<std::vector<double>> class_signs;  // [domain][channel]; empty = defaults
  std::vector<double> positive_fraction;     // [domain]; empty = defaults from label_skew
  double label_skew = 0.25;
  double noise = 0.1;
  double period = 16.0;
  double subject_phase = 0.0;  // half-width of the per-subject phase jitter, radians
  double sample_phase = 0.3;   // half-width of the per-sample phase jitter, radians
  std::uint64_t seed = 7;

  // Style parameters actually used, after defaults are filled in. Default
  // gains are 1: a larger gain also scales the class signal, which lets the
  // per-channel statistics of that domain split by class.
  std::vector<std::vector<double>> resolved_gains() const {
    if (!gains.empty()) return gains;
    return std::vector<std::vector<double>>(n_domains, std::vector<double>(channels, 1.0));
  }

  std::vector<std::vector<double>> resolved_class_signs() const {
    if (!class_signs.empty()) return class_signs;
    std::vector<std::vector<double>> k(n_domains, std::vector<double>(channels, 0.0));
    for (auto& row : k) {
      for (std::size_t c = 0; c < channels; ++c) {
        if (c % 3 != 0) row[c] = c % 3 == 1 ? 1.0 : -1.0;
      }
    }
    return k;
  }

  // Domain d sits at 1.5 d, with alternating sign across channels.
  std::vector<std::vector<double>> resolved_offsets() const {
    if (!offsets.empty()) return offsets;
    std::vector<std::vector<double>> b(n_domains, std::vector<double>(channels));
    for (std::size_t d = 0; d < n_domains; ++d) {
      for (std::size_t c = 0; c < channels; ++c) b[d][c] = 1.5 * static_cast<double>(d) * (c % 2 == 0 ? 1.0 : -1.0);
    }
    return b;
  }

  // 0.5 + skew on even domains, 0.5 - skew on odd ones; the last domain of an
  // odd count stays at 0.5 so the pooled classes stay near balance.
  std::vector<double> resolved_positive_fraction() const {
    if (!positive_fraction.empty()) return positive_fraction;
    std::vector<double> p(n_domains, 0.5);
    for (std::size_t d = 0; d + (n_domains % 2) < n_domains; ++d) p[d] = 0.5 + (d % 2 == 0 ? label_skew : -label_skew);
    return p;
  }

  void validate() const {
    if (n_domains < 1) throw ConfigError("synthetic: n_domains must be >= 1");
    if (n_subjects < 2) throw ConfigError("synthetic: n_subjects must be >= 2");
    if (samples_per_subject < 1 || time_len < 2 || channels < 1) throw ConfigError("synthetic: empty shape");
    if (!(noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
    if (!(period > 0.0)) throw ConfigError("synthetic: period must be positive");
    if (!(subject_phase >= 0.0 && sample_phase >= 0.0)) throw ConfigError("synthetic: phase jitters must be >= 0");
    if (!(label_skew >= 0.0 && label_skew < 0.5)) throw ConfigError("synthetic: label_skew must be in [0, 0.5)");
    auto check = [&](const std::vector<std::vector<double>>& m, const char* what, bool positive) {
      if (m.empty()) return;
      if (m.size() != n_domains) throw ConfigError(std::string("synthetic: ") + what + " needs one row per domain");
      for (const auto& row : m) {
        if (row.size() != channels) throw ConfigError(std::string("synthetic: ") + what + " needs one value per channel");
        for (double v : row) {
          if (positive && !(v > 0.0)) throw ConfigError("synthetic: gains must be positive");
        }
      }
    };
    check(gains, "gains", true);
    check(offsets, "offsets", false);
    check(class_signs, "class_signs", false);
    if (!positive_fraction.empty()) {
      if (positive_fraction.size() != n_domains) throw ConfigError("synthetic: positive_fraction needs one value per domain");
      for (double p : positive_fraction) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synthetic: positive_fraction must lie in [0, 1]");
      }
    }
  }
};

struct SyntheticData {
  Dataset dataset;
  std::map<std::string, int> planted_domain;  // subject id -> planted domain index
};

inline std::string synthetic_subject_id(std::size_t s, std::size_t n) {
  const int width = n >= 100 ? 3 : 2;
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%0*zu", width, s + 1);
  return buf;
}

inline std::size_t planted_domain_of(std::size_t subject, std::size_t n_domains) { return subject % n_domains; }

/// Labels of all subjects: within each domain, positives are spread evenly
/// over the domain's subject order.
inline std::vector<int> planted_labels(const SyntheticSpec& spec) {
  const auto frac = spec.resolved_positive_fraction();
  std::vector<int> labels(spec.n_subjects, 0);
  for (std::size_t d = 0; d < spec.n_domains; ++d) {
    std::vector<std::size_t> members;
    for (std::size_t s = d; s < spec.n_subjects; s += spec.n_domains) members.push_back(s);
    const auto n = static_cast<long long>(members.size());
    long long pos = std::llround(static_cast<double>(n) * frac[d]);
    if (n >= 2) pos = std::clamp(pos, 1LL, n - 1);
    // Member j is positive when floor((j+1) pos / n) steps up.
    for (long long j = 0; j < n; ++j) labels[members[j]] = ((j + 1) * pos) / n > (j * pos) / n ? 1 : 0;
  }
  return labels;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto gains = spec.resolved_gains();
  const auto offsets = spec.resolved_offsets();
  const auto signs = spec.resolved_class_signs();
  const auto labels = planted_labels(spec);
  SyntheticData out;
  out.dataset.name = spec.name;
  out.dataset.time_len = spec.time_len;
  out.dataset.channels = spec.channels;
  const Rng root(spec.seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double w = two_pi / spec.period;
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    Rng rng = root.fork(s);
    const std::size_t d = planted_domain_of(s, spec.n_domains);
    Subject subj;
    subj.id = synthetic_subject_id(s, spec.n_subjects);
    subj.label = labels[s];
    const double subject_phase = rng.uniform(-spec.subject_phase, spec.subject_phase);
    for (std::size_t i = 0; i < spec.samples_per_subject; ++i) {
      Sample x;
      x.subject_id = subj.id;
      x.label = subj.label;
      x.index = i;
      x.values.resize(spec.time_len * spec.channels);
      const double phase = subject_phase + rng.uniform(-spec.sample_phase, spec.sample_phase);
      const double shift = (subj.label - 0.5) * spec.class_amplitude;
      for (std::size_t t = 0; t < spec.time_len; ++t) {
        for (std::size_t c = 0; c < spec.channels; ++c) {
          const double ang = w * static_cast<double>(t) + phase +
                             two_pi * static_cast<double>(c) / static_cast<double>(spec.channels) -
                             shift * signs[d][c];
          double v = gains[d][c] * 0.5 * (1.0 + std::sin(ang)) + offsets[d][c];
          if (spec.noise > 0.0) v += spec.noise * rng.normal();
          x.values[t * spec.channels + c] = v;
        }
      }
      subj.samples.push_back(std::move(x));
    }
    out.planted_domain[subj.id] = static_cast<int>(d);
    out.dataset.subjects.push_back(std::move(subj));
  }
  return out;
}

inline void save_ground_truth(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, d] : data.planted_domain) j[id] = d;
  std::ofstream os(dir / "ground_truth.json", std::ios::trunc);
  os << j.dump(2) << '\n';
}

inline std::map<std::string, int> load_ground_truth(const std::filesystem::path& dir) {
  std::ifstream is(dir / "ground_truth.json");
  if (!is) throw LoadError("missing file " + (dir / "ground_truth.json").string());
  nlohmann::json j;
  is >> j;
  return j.get<std::map<std::string, int>>();
}

}  // namespace mssda::data
