#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/errors.hpp"
#include "mssda/nn/tensor.hpp"

namespace mssda::data {

/// One fixed-length multichannel window. `values` is T x C, row-major by time.
struct Sample {
  std::vector<double> values;
  std::string subject_id;
  int label = 0;
  std::size_t index = 0;  // temporal order within the subject

  double at(std::size_t t, std::size_t c, std::size_t channels) const { return values[t * channels + c]; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Subject {
  std::string id;
  int label = 0;
  std::vector<Sample> samples;

  friend bool operator==(const Subject&, const Subject&) = default;
};

struct Dataset {
  std::string name;
  std::size_t time_len = 0;
  std::size_t channels = 0;
  std::vector<Subject> subjects;

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.samples.size();
    return n;
  }

  const Subject& subject(const std::string& id) const {
    for (const auto& s : subjects) {
      if (s.id == id) return s;
    }
    throw InputError("unknown subject id '" + id + "'");
  }

  std::vector<const Sample*> all_samples() const {
    std::vector<const Sample*> out;
    out.reserve(sample_count());
    for (const auto& s : subjects) {
      for (const auto& x : s.samples) out.push_back(&x);
    }
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks the Dataset invariants; throws InputError on the first violation.
inline void validate(const Dataset& d) {
  if (d.time_len == 0 || d.channels == 0) throw InputError("dataset '" + d.name + "' has zero time_len or channels");
  std::set<std::string> ids;
  for (const auto& s : d.subjects) {
    if (!ids.insert(s.id).second) throw InputError("duplicate subject id '" + s.id + "'");
    if (s.label != 0 && s.label != 1) throw InputError("subject '" + s.id + "' has non-binary label");
    if (s.samples.empty()) throw InputError("subject '" + s.id + "' has no samples");
    for (const auto& x : s.samples) {
      if (x.values.size() != d.time_len * d.channels) throw InputError("sample of '" + s.id + "' has wrong size");
      for (double v : x.values) {
        if (!std::isfinite(v)) throw InputError("sample of '" + s.id + "' has a non-finite value");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + one CSV per subject.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  if (b < e && *b == '+') ++b;
  auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc{} || r.ptr != e) throw LoadError(where + ": cannot parse number '" + std::string(s) + "'");
  if (!std::isfinite(v)) throw LoadError(where + ": non-finite value");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline std::string subject_file_name(const std::string& id) { return id + ".csv"; }

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate(d);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"name", d.name}, {"time_len", d.time_len}, {"channels", d.channels}};
  manifest["subjects"] = nlohmann::json::array();
  for (const auto& s : d.subjects) {
    const auto file = subject_file_name(s.id);
    manifest["subjects"].push_back(
        {{"id", s.id}, {"label", s.label}, {"n_samples", s.samples.size()}, {"file", file}});
    std::ofstream os(dir / file, std::ios::trunc);
    if (!os) throw LoadError("cannot write " + (dir / file).string());
    os << "sample,t";
    for (std::size_t c = 0; c < d.channels; ++c) os << ",c" << c;
    os << '\n';
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
      const auto& x = s.samples[i];
      for (std::size_t t = 0; t < d.time_len; ++t) {
        os << i << ',' << t;
        for (std::size_t c = 0; c < d.channels; ++c) os << ',' << detail::format_double(x.at(t, c, d.channels));
        os << '\n';
      }
    }
  }
  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  ms << manifest.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream ms(mpath);
  if (!ms) throw LoadError("missing file " + mpath.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(mpath.string() + ": " + e.what());
  }
  Dataset d;
  try {
    d.name = manifest.at("name").get<std::string>();
    d.time_len = manifest.at("time_len").get<std::size_t>();
    d.channels = manifest.at("channels").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(mpath.string() + ": " + e.what());
  }
  for (const auto& js : manifest.at("subjects")) {
    Subject s;
    std::size_t n_samples = 0;
    std::string file;
    try {
      s.id = js.at("id").get<std::string>();
      s.label = js.at("label").get<int>();
      n_samples = js.at("n_samples").get<std::size_t>();
      file = js.at("file").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(mpath.string() + ": subject entry: " + e.what());
    }
    const auto path = dir / file;
    std::ifstream is(path);
    if (!is) throw LoadError("missing file " + path.string() + " for subject '" + s.id + "'");
    std::string line;
    std::getline(is, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string expected = "sample,t";
    for (std::size_t c = 0; c < d.channels; ++c) expected += ",c" + std::to_string(c);
    if (line != expected) throw LoadError(path.string() + ":1: header does not match " + std::to_string(d.channels) + " channels");
    s.samples.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
      s.samples[i].values.resize(d.time_len * d.channels);
      s.samples[i].subject_id = s.id;
      s.samples[i].label = s.label;
      s.samples[i].index = i;
    }
    std::size_t row = 0;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(lineno);
      auto cells = detail::split_csv(line);
      if (cells.size() != d.channels + 2) throw LoadError(where + ": expected " + std::to_string(d.channels + 2) + " columns");
      if (row >= n_samples * d.time_len) throw LoadError(where + ": more rows than n_samples*time_len for subject '" + s.id + "'");
      const std::size_t want_i = row / d.time_len, want_t = row % d.time_len;
      if (detail::parse_double(cells[0], where) != static_cast<double>(want_i) ||
          detail::parse_double(cells[1], where) != static_cast<double>(want_t)) {
        throw LoadError(where + ": rows must be sorted by (sample, t)");
      }
      for (std::size_t c = 0; c < d.channels; ++c) {
        s.samples[want_i].values[want_t * d.channels + c] = detail::parse_double(cells[c + 2], where);
      }
      ++row;
    }
    if (row != n_samples * d.time_len) {
      throw LoadError(path.string() + ": subject '" + s.id + "' has " + std::to_string(row) + " rows, expected " +
                      std::to_string(n_samples * d.time_len));
    }
    d.subjects.push_back(std::move(s));
  }
  try {
    validate(d);
  } catch (const InputError& e) {
    throw LoadError(mpath.string() + ": " + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out split

/// Read-only view of a sample with its label hidden. The training interfaces
/// for target data only accept this type.
class UnlabeledView {
 public:
  explicit UnlabeledView(const Sample& s) : s_(&s) {}
  std::span<const double> values() const { return s_->values; }
  const std::string& subject_id() const { return s_->subject_id; }
  std::size_t sample_index() const { return s_->index; }

 private:
  const Sample* s_;
};

struct LosoSplit {
  std::string held_out;
  std::vector<const Sample*> source;
  std::vector<UnlabeledView> target;
  int target_label = 0;  // scoring only
};

inline LosoSplit loso_split(const Dataset& d, const std::string& held_out) {
  const Subject& target = d.subject(held_out);
  LosoSplit split;
  split.held_out = held_out;
  split.target_label = target.label;
  for (const auto& s : d.subjects) {
    for (const auto& x : s.samples) {
      if (s.id == held_out) {
        split.target.emplace_back(x);
      } else {
        split.source.push_back(&x);
      }
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Class balancing by reuse

struct Balanced {
  std::vector<const Sample*> samples;
  bool single_class = false;
};

/// Duplicates minority-class samples round-robin (input order) until both
/// classes have equal counts. Single-class input comes back unchanged.
inline Balanced balance_by_reuse(std::span<const Sample* const> samples) {
  Balanced out;
  out.samples.assign(samples.begin(), samples.end());
  std::vector<const Sample*> by_class[2];
  for (const auto* s : samples) by_class[s->label == 1 ? 1 : 0].push_back(s);
  if (by_class[0].empty() || by_class[1].empty()) {
    out.single_class = true;
    return out;
  }
  const auto& minority = by_class[0].size() < by_class[1].size() ? by_class[0] : by_class[1];
  const std::size_t deficit =
      std::max(by_class[0].size(), by_class[1].size()) - std::min(by_class[0].size(), by_class[1].size());
  for (std::size_t k = 0; k < deficit; ++k) out.samples.push_back(minority[k % minority.size()]);
  return out;
}

// ---------------------------------------------------------------------------
// Batching helpers

/// Per-channel z-score fitted on a set of samples (labels unused).
struct ChannelNormalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static ChannelNormalizer identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }

  template <class Range>
  static ChannelNormalizer fit(const Range& value_sets, std::size_t channels) {
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    double count = 0.0;
    for (std::span<const double> v : value_sets) {
      for (std::size_t k = 0; k < v.size(); ++k) {
        sum[k % channels] += v[k];
        sq[k % channels] += v[k] * v[k];
      }
      count += static_cast<double>(v.size() / channels);
    }
    ChannelNormalizer n{std::vector<double>(channels), std::vector<double>(channels)};
    for (std::size_t c = 0; c < channels; ++c) {
      n.mean[c] = count > 0 ? sum[c] / count : 0.0;
      const double var = count > 0 ? std::max(0.0, sq[c] / count - n.mean[c] * n.mean[c]) : 0.0;
      n.scale[c] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return n;
  }
};

/// Stacks T x C samples into a channels-first batch [B, C, T].
template <std::floating_point T, class Range>
nn::Tensor<T> to_batch(const Range& value_sets, std::size_t time_len, std::size_t channels,
                       const ChannelNormalizer& norm) {
  std::size_t batch = 0;
  for ([[maybe_unused]] std::span<const double> v : value_sets) ++batch;
  nn::Tensor<T> out({batch, channels, time_len});
  std::size_t n = 0;
  for (std::span<const double> v : value_sets) {
    for (std::size_t t = 0; t < time_len; ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        out.at(n, c, t) = static_cast<T>((v[t * channels + c] - norm.mean[c]) * norm.scale[c]);
      }
    }
    ++n;
  }
  return out;
}

}  // namespace mssda::data
