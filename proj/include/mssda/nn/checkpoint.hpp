#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/errors.hpp"
#include "mssda/nn/network.hpp"

namespace mssda::nn {

namespace detail {

inline void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
                        static_cast<unsigned char>((bits >> 16) & 0xff), static_cast<unsigned char>(bits >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}, {"seed", s.seed}};
  if (s.has_parameters()) {
    j["in"] = s.in;
    j["out"] = s.out;
  }
  if (s.kind == LayerKind::conv1d) {
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
    j["padding"] = s.padding;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  s.in = j.value("in", std::size_t{0});
  s.out = j.value("out", std::size_t{0});
  s.kernel = j.value("kernel", std::size_t{0});
  s.stride = j.value("stride", std::size_t{1});
  s.padding = j.value("padding", std::size_t{0});
  return s;
}

/// Writes meta.json plus one little-endian float32 file per parameter.
template <std::floating_point T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "mssda-checkpoint-1";
  meta["seed"] = net.seed();
  meta["input_shape"] = net.input_shape();
  meta["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers()) meta["layers"].push_back(layer_to_json(l));
  meta["parameters"] = nlohmann::json::array();
  for (const auto& p : net.parameters()) {
    const std::string file = p.name + ".bin";
    meta["parameters"].push_back({{"name", p.name}, {"shape", p.value.shape()}, {"file", file}});
    std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot write " + (dir / file).string());
    for (T v : p.value.data()) detail::write_f32_le(os, static_cast<float>(v));
  }
  std::ofstream ms(dir / "meta.json", std::ios::trunc);
  if (!ms) throw LoadError("cannot write " + (dir / "meta.json").string());
  ms << meta.dump(2) << '\n';
}

template <std::floating_point T>
Network<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "meta.json");
  if (!ms) throw LoadError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    ms >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError((dir / "meta.json").string() + ": " + e.what());
  }
  std::vector<LayerSpec> layers;
  for (const auto& l : meta.at("layers")) layers.push_back(layer_from_json(l));
  Network<T> net(meta.at("input_shape").get<SampleShape>(), layers, meta.at("seed").get<std::uint64_t>());
  const auto& plist = meta.at("parameters");
  if (plist.size() != net.parameters().size()) throw LoadError("checkpoint parameter count mismatch in " + dir.string());
  for (std::size_t i = 0; i < plist.size(); ++i) {
    auto& p = net.parameters()[i];
    if (plist[i].at("name").get<std::string>() != p.name ||
        plist[i].at("shape").get<Shape>() != p.value.shape()) {
      throw LoadError("checkpoint parameter " + std::to_string(i) + " does not match layer list");
    }
    const auto path = dir / plist[i].at("file").get<std::string>();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw LoadError("missing parameter file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() != 4 * p.value.size()) throw LoadError("wrong byte count in " + path.string());
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = static_cast<T>(detail::read_f32_le(&bytes[4 * k]));
  }
  return net;
}

}  // namespace mssda::nn
