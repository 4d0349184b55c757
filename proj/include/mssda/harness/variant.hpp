#pragma once

#include <string>
#include <vector>

#include "mssda/align/selection.hpp"
#include "mssda/errors.hpp"

namespace mssda::harness {

// mssda: one branch per selected cluster. sa_selected: one branch on the union
// of the selected clusters. sa_all: one branch on the whole source. ma_all: one
// branch per non-empty cluster. single: one branch on cluster k. erm: whole
// source, no adversarial term.
enum class AlignMode { mssda, sa_selected, sa_all, ma_all, single, erm };

struct Variant {
  std::string name;
  AlignMode mode = AlignMode::mssda;
  align::SelectionStrategy strategy = align::SelectionStrategy::max_dis;
  std::size_t m = 2;
  std::size_t k = 0;  // cluster index for `single`
};

inline std::string valid_variant_names() {
  return "mssda, sa_select, sa_all, ma_all, erm, top1_dis, top2_dis, top3_dis, top1_sum, top2_sum, top3_sum, single_<k>";
}

/// `m` and `strategy` are the configured defaults for mssda and sa_select.
inline Variant parse_variant(const std::string& name, std::size_t m, align::SelectionStrategy strategy) {
  using align::SelectionStrategy;
  if (name == "mssda") return {name, AlignMode::mssda, strategy, m, 0};
  if (name == "sa_select") return {name, AlignMode::sa_selected, strategy, m, 0};
  if (name == "sa_all") return {name, AlignMode::sa_all, SelectionStrategy::all, 0, 0};
  if (name == "ma_all") return {name, AlignMode::ma_all, SelectionStrategy::all, 0, 0};
  if (name == "erm") return {name, AlignMode::erm, SelectionStrategy::all, 0, 0};
  if (name.size() == 8 && name.starts_with("top") && name[3] >= '1' && name[3] <= '3' && name[4] == '_') {
    const std::string tail = name.substr(5);
    if (tail == "dis" || tail == "sum") {
      return {name, AlignMode::mssda, tail == "dis" ? SelectionStrategy::max_dis : SelectionStrategy::sum_dis,
              static_cast<std::size_t>(name[3] - '0'), 0};
    }
  }
  if (name.starts_with("single_") && name.size() > 7 &&
      name.find_first_not_of("0123456789", 7) == std::string::npos && name.size() <= 10) {
    return {name, AlignMode::single, SelectionStrategy::all, 1, std::stoul(name.substr(7))};
  }
  throw ConfigError("unknown variant '" + name + "' (valid: " + valid_variant_names() + ")");
}

inline std::vector<Variant> parse_variants(const std::vector<std::string>& names, std::size_t m,
                                           align::SelectionStrategy strategy) {
  if (names.empty()) throw ConfigError("no variants given (valid: " + valid_variant_names() + ")");
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(parse_variant(n, m, strategy));
  return out;
}

}  // namespace mssda::harness
