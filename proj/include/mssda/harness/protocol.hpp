#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/errors.hpp"

namespace mssda::harness {

enum class Protocol { subject_vote, segment_vote };

inline const char* to_string(Protocol p) { return p == Protocol::subject_vote ? "subject_vote" : "segment_vote"; }

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "subject_vote") return Protocol::subject_vote;
  if (s == "segment_vote") return Protocol::segment_vote;
  throw ConfigError("unknown protocol '" + s + "' (valid: subject_vote, segment_vote)");
}

/// 1 iff the positive fraction is >= theta. theta = 0 votes everything positive.
inline int vote_subject(std::span<const int> labels, double theta) {
  if (labels.empty()) throw InputError("vote_subject: empty label list");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  // pos / n >= theta, evaluated without dividing so 5/10 >= 0.5 is exact.
  return static_cast<double>(pos) >= theta * static_cast<double>(labels.size()) ? 1 : 0;
}

/// Consecutive windows of `segment_len`; a shorter final remainder is its own segment.
inline std::vector<std::span<const int>> segments(std::span<const int> labels, std::size_t segment_len) {
  if (segment_len < 1) throw ConfigError("segment_len must be >= 1");
  std::vector<std::span<const int>> out;
  for (std::size_t start = 0; start < labels.size(); start += segment_len) {
    out.push_back(labels.subspan(start, std::min(segment_len, labels.size() - start)));
  }
  return out;
}

inline std::vector<int> segment_vote(std::span<const int> labels, std::size_t segment_len, double theta) {
  std::vector<int> out;
  for (auto seg : segments(labels, segment_len)) out.push_back(vote_subject(seg, theta));
  return out;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

/// Positive class is 1. A ratio with a zero denominator is 0 and sets `degenerate`.
struct Metrics {
  Counts counts;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

inline Metrics metrics_from_counts(const Counts& c) {
  Metrics m;
  m.counts = c;
  auto ratio = [&](std::size_t num, std::size_t den) {
    if (den == 0) {
      m.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  if (m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.degenerate = true;
  }
  return m;
}

inline Counts confusion(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw InputError("compute_metrics: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] != 0 && pred[i] != 1) || (truth[i] != 0 && truth[i] != 1)) {
      throw InputError("compute_metrics: labels must be 0 or 1");
    }
    if (pred[i] == 1) {
      (truth[i] == 1 ? c.tp : c.fp) += 1;
    } else {
      (truth[i] == 1 ? c.fn : c.tn) += 1;
    }
  }
  return c;
}

inline Metrics compute_metrics(std::span<const int> pred, std::span<const int> truth) {
  return metrics_from_counts(confusion(pred, truth));
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"tp", m.counts.tp},       {"fp", m.counts.fp},       {"fn", m.counts.fn},
          {"tn", m.counts.tn},       {"precision", m.precision}, {"recall", m.recall},
          {"specificity", m.specificity}, {"accuracy", m.accuracy}, {"f1", m.f1},
          {"degenerate", m.degenerate}};
}

}  // namespace mssda::harness
