#pragma once

#include <string>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/nn/network.hpp"

namespace mssda::data {

/// Network layouts. `dfn` targets 147x16 windows (4-conv contrastive
/// extractor, 7-conv alignment extractor), `fra` targets 69x16 windows
/// (3 conv layers for both), `tiny` is a desk-scale layout for tests and
/// synthetic benchmarks. Widths are our choice.
enum class ArchPreset { dfn, fra, tiny };

inline const char* to_string(ArchPreset p) {
  switch (p) {
    case ArchPreset::dfn: return "dfn";
    case ArchPreset::fra: return "fra";
    case ArchPreset::tiny: return "tiny";
  }
  return "?";
}

inline ArchPreset arch_preset_from_string(const std::string& s) {
  if (s == "dfn") return ArchPreset::dfn;
  if (s == "fra") return ArchPreset::fra;
  if (s == "tiny") return ArchPreset::tiny;
  throw ConfigError("unknown architecture preset '" + s + "' (valid: dfn, fra, tiny)");
}

namespace detail {
inline void conv_relu(std::vector<nn::LayerSpec>& l, std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
  l.push_back(nn::LayerSpec::conv(in, out, k, s, k / 2));
  l.push_back(nn::LayerSpec::relu());
}
}  // namespace detail

/// Contrastive-stage extractor; output is the final conv map [C', L'] (pre-activation).
template <std::floating_point T>
nn::Network<T> contrastive_extractor(ArchPreset p, std::size_t channels, std::size_t time_len, std::uint64_t seed) {
  std::vector<nn::LayerSpec> l;
  switch (p) {
    case ArchPreset::dfn:
      detail::conv_relu(l, channels, 16, 5, 1);
      detail::conv_relu(l, 16, 32, 5, 2);
      detail::conv_relu(l, 32, 32, 3, 2);
      detail::conv_relu(l, 32, 32, 3, 1);
      break;
    case ArchPreset::fra:
      detail::conv_relu(l, channels, 16, 5, 1);
      detail::conv_relu(l, 16, 32, 5, 2);
      detail::conv_relu(l, 32, 32, 3, 1);
      break;
    case ArchPreset::tiny:
      detail::conv_relu(l, channels, 8, 5, 1);
      detail::conv_relu(l, 8, 8, 5, 2);
      break;
  }
  // The map ends at the last convolution: a trailing ReLU can zero whole
  // channels for some inputs and erase their statistics.
  l.pop_back();
  return nn::Network<T>({channels, time_len}, std::move(l), seed);
}

/// Alignment-stage extractor F_k: conv stack followed by global average pooling.
template <std::floating_point T>
nn::Network<T> alignment_extractor(ArchPreset p, std::size_t channels, std::size_t time_len, std::uint64_t seed) {
  std::vector<nn::LayerSpec> l;
  switch (p) {
    case ArchPreset::dfn:
      detail::conv_relu(l, channels, 16, 5, 1);
      detail::conv_relu(l, 16, 16, 5, 1);
      detail::conv_relu(l, 16, 32, 5, 2);
      detail::conv_relu(l, 32, 32, 3, 1);
      detail::conv_relu(l, 32, 32, 3, 2);
      detail::conv_relu(l, 32, 32, 3, 1);
      detail::conv_relu(l, 32, 32, 3, 2);
      break;
    case ArchPreset::fra:
      detail::conv_relu(l, channels, 16, 5, 1);
      detail::conv_relu(l, 16, 32, 5, 2);
      detail::conv_relu(l, 32, 32, 3, 1);
      break;
    case ArchPreset::tiny:
      detail::conv_relu(l, channels, 8, 5, 1);
      detail::conv_relu(l, 8, 8, 5, 2);
      break;
  }
  l.push_back(nn::LayerSpec::pool());
  return nn::Network<T>({channels, time_len}, std::move(l), seed);
}

inline std::size_t head_width(ArchPreset p) { return p == ArchPreset::tiny ? 16 : 64; }

/// Three-layer fully connected head ending in 2 logits (classifier C_k and discriminator D_k).
template <std::floating_point T>
nn::Network<T> mlp_head(ArchPreset p, std::size_t features, std::uint64_t seed) {
  const std::size_t h = head_width(p);
  std::vector<nn::LayerSpec> l{nn::LayerSpec::dense(features, h), nn::LayerSpec::relu(), nn::LayerSpec::dense(h, h),
                               nn::LayerSpec::relu(), nn::LayerSpec::dense(h, 2)};
  return nn::Network<T>({features}, std::move(l), seed);
}

}  // namespace mssda::data
