#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/nn/graph.hpp"
#include "mssda/nn/tensor.hpp"
#include "mssda/random.hpp"

namespace mssda::nn {

enum class LayerKind { conv1d, linear, relu, global_avg_pool, flatten };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv1d, LayerKind::linear, LayerKind::relu, LayerKind::global_avg_pool,
                 LayerKind::flatten}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

/// One layer as data. For linear layers in/out are feature counts.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::uint64_t seed = 0;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0) {
    return {LayerKind::conv1d, in, out, kernel, stride, padding, 0};
  }
  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out, 0, 1, 0, 0}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec pool() { return {LayerKind::global_avg_pool}; }
  static LayerSpec flat() { return {LayerKind::flatten}; }

  bool has_parameters() const { return kind == LayerKind::conv1d || kind == LayerKind::linear; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Per-sample activation shape: {channels, length} for sequences, {features} for vectors.
using SampleShape = std::vector<std::size_t>;

/// Propagates a per-sample shape through one layer; throws ConfigError naming the layer.
inline SampleShape propagate_shape(const LayerSpec& spec, const SampleShape& in, std::size_t index) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("layer " + std::to_string(index) + " (" + to_string(spec.kind) + "): " + why +
                      "; input shape " + shape_string(in));
  };
  switch (spec.kind) {
    case LayerKind::conv1d: {
      if (in.size() != 2) fail("expects [channels, length] input");
      if (in[0] != spec.in) fail("expects " + std::to_string(spec.in) + " input channels");
      if (spec.kernel == 0 || spec.stride == 0 || spec.out == 0) fail("kernel, stride and out must be positive");
      const auto len = conv1d_output_length(in[1], spec.kernel, spec.stride, spec.padding);
      if (len < 1) fail("output length would be < 1");
      return {spec.out, len};
    }
    case LayerKind::linear:
      if (in.size() != 1) fail("expects [features] input");
      if (in[0] != spec.in) fail("expects " + std::to_string(spec.in) + " input features");
      if (spec.out == 0) fail("out must be positive");
      return {spec.out};
    case LayerKind::relu:
      return in;
    case LayerKind::global_avg_pool:
      if (in.size() != 2) fail("expects [channels, length] input");
      return {in[0]};
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  fail("unsupported layer");
  return {};
}

/// A feed-forward stack of layers with owned parameters. Parameter objects
/// are created once at construction; their addresses stay valid for the
/// lifetime of the network (copies get their own parameters).
template <std::floating_point T>
class Network {
 public:
  Network() = default;

  Network(SampleShape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
    SampleShape shape = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      shape = propagate_shape(layers_[i], shape, i);
      layers_[i].seed = splitmix64(seed_ + 0x1000 * (i + 1));
    }
    output_shape_ = shape;
    initialize();
  }

  const SampleShape& input_shape() const { return input_shape_; }
  const SampleShape& output_shape() const { return output_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  std::vector<Parameter<T>*> parameter_ptrs() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Runs the stack on a batched input [B, ...input_shape]. When `upto` is
  /// set, stops after that many layers (used to read intermediate maps).
  Var<T> forward(Graph<T>& g, Var<T> x, std::optional<std::size_t> upto = std::nullopt) {
    const auto& vx = g.value(x);
    SampleShape got(vx.shape().begin() + 1, vx.shape().end());
    if (vx.rank() < 2 || got != input_shape_) {
      throw ConfigError("network input: expected per-sample shape " + shape_string(input_shape_) + ", got " +
                        shape_string(vx.shape()) + " (batch first)");
    }
    const std::size_t stop = upto.value_or(layers_.size());
    std::size_t p = 0;
    for (std::size_t i = 0; i < stop; ++i) {
      const auto& spec = layers_[i];
      switch (spec.kind) {
        case LayerKind::conv1d: {
          auto w = g.parameter(params_[p]);
          auto b = g.parameter(params_[p + 1]);
          p += 2;
          x = conv1d(g, x, w, b, spec.stride, spec.padding);
          break;
        }
        case LayerKind::linear: {
          auto w = g.parameter(params_[p]);
          auto b = g.parameter(params_[p + 1]);
          p += 2;
          x = linear(g, x, w, b);
          break;
        }
        case LayerKind::relu: x = relu(g, x); break;
        case LayerKind::global_avg_pool: x = global_avg_pool(g, x); break;
        case LayerKind::flatten: x = flatten(g, x); break;
      }
    }
    return x;
  }

  // Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void initialize() {
    params_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& spec = layers_[i];
      if (!spec.has_parameters()) continue;
      Shape wshape = spec.kind == LayerKind::conv1d ? Shape{spec.out, spec.in, spec.kernel} : Shape{spec.out, spec.in};
      const std::size_t fan_in = spec.kind == LayerKind::conv1d ? spec.in * spec.kernel : spec.in;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng(spec.seed);
      Tensor<T> w(wshape);
      for (auto& v : w.buffer()) v = static_cast<T>(rng.uniform(-bound, bound));
      const std::string base = "layer" + std::to_string(i) + "." + to_string(spec.kind);
      params_.emplace_back(base + ".weight", std::move(w));
      params_.emplace_back(base + ".bias", Tensor<T>({spec.out}));
    }
  }

  // Order-sensitive checksum over parameter bits; used to detect unintended writes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
      for (T v : p.value.data()) {
        double d = static_cast<double>(v);
        std::uint64_t bits;
        std::memcpy(&bits, &d, sizeof bits);
        h = splitmix64(h ^ bits);
      }
    }
    return h;
  }

  template <std::floating_point U>
  Network<U> cast() const {
    Network<U> out(input_shape_, layers_, seed_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  SampleShape input_shape_;
  SampleShape output_shape_;
  std::vector<LayerSpec> layers_;
  std::uint64_t seed_ = 0;
  std::vector<Parameter<T>> params_;
};

}  // namespace mssda::nn
