#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/data/synthetic.hpp"
#include "mssda/errors.hpp"
#include "mssda/harness/run.hpp"
#include "mssda/parallel.hpp"

namespace mssda::config {

using nlohmann::json;

struct SweepSpec {
  double lo = 0.1;
  double hi = 0.9;
  double step = 0.1;
};

/// Whole configuration document. Every key is optional except where a
/// command needs a value that has no default (output directory, data path).
struct AppConfig {
  data::SyntheticSpec dataset;
  std::optional<std::string> data_path;
  harness::ProtocolConfig run;
  std::vector<std::string> variants{"mssda", "sa_select", "sa_all", "ma_all"};
  SweepSpec sweep;
  std::optional<std::string> output_dir;
};

namespace detail {

/// Reads keys of one object, remembering which were consumed so leftovers
/// can be rejected with their full dotted path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + where(key) + "' has the wrong type");
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  std::optional<Section> child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + where(k) + "'");
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline AppConfig parse_config(const json& doc) {
  AppConfig c;
  detail::Section root(doc, "");
  if (auto s = root.child("dataset")) {
    auto& d = c.dataset;
    s->get("path", c.data_path);
    s->get("name", d.name);
    s->get("n_subjects", d.n_subjects);
    s->get("samples_per_subject", d.samples_per_subject);
    s->get("time_len", d.time_len);
    s->get("channels", d.channels);
    s->get("n_domains", d.n_domains);
    s->get("class_amplitude", d.class_amplitude);
    s->get("gains", d.gains);
    s->get("offsets", d.offsets);
    s->get("class_signs", d.class_signs);
    s->get("noise", d.noise);
    s->get("positive_fraction", d.positive_fraction);
    s->get("label_skew", d.label_skew);
    s->get("period", d.period);
    s->get("subject_phase", d.subject_phase);
    s->get("sample_phase", d.sample_phase);
    s->get("seed", d.seed);
    s->finish();
  }
  auto& run = c.run;
  if (auto s = root.child("stage1")) {
    auto& s1 = run.stage1;
    std::string preset = to_string(s1.preset);
    s->get("preset", preset);
    if (preset == "fra") s1 = contrastive::Stage1Config::fra();
    s1.preset = data::arch_preset_from_string(preset);
    s->get("epochs", s1.epochs);
    s->get("lr", s1.lr);
    s->get("weight_decay", s1.weight_decay);
    s->get("batch_size", s1.batch_size);
    if (auto a = s->child("augment")) {
      a->get("jitter", s1.augment.jitter);
      a->get("scale_lo", s1.augment.scale_lo);
      a->get("scale_hi", s1.augment.scale_hi);
      a->get("mask_fraction", s1.augment.mask_fraction);
      a->finish();
    }
    s->finish();
  }
  if (auto s = root.child("stage2")) {
    auto& s2 = run.stage2;
    std::string space = "pca2d";
    s->get("k_min", s2.k_min);
    s->get("k_max", s2.k_max);
    s->get("space", space);
    if (space == "pca2d") {
      s2.space = latent::GmmSpace::pca2d;
    } else if (space == "full") {
      s2.space = latent::GmmSpace::full;
    } else {
      throw ConfigError("config: stage2.space must be 'pca2d' or 'full'");
    }
    s->get("restarts", s2.gmm.restarts);
    s->get("max_iterations", s2.gmm.max_iterations);
    s->get("tolerance", s2.gmm.tolerance);
    s->get("ridge", s2.gmm.ridge);
    s->finish();
  }
  if (auto s = root.child("stage3")) {
    auto& s3 = run.stage3;
    std::string preset = to_string(s3.preset), update = to_string(s3.update), strategy = to_string(s3.strategy);
    s->get("m", s3.m);
    s->get("alpha", s3.alpha);
    s->get("lr", s3.lr);
    s->get("weight_decay", s3.weight_decay);
    s->get("batch_size", s3.batch_size);
    s->get("epochs", s3.epochs);
    s->get("plateau_window", s3.plateau_window);
    s->get("plateau_tolerance", s3.plateau_tolerance);
    s->get("preset", preset);
    s->get("update", update);
    s->get("strategy", strategy);
    s->get("mode", run.variant);
    s3.preset = data::arch_preset_from_string(preset);
    s3.update = align::update_mode_from_string(update);
    if (strategy == "max_dis") {
      s3.strategy = align::SelectionStrategy::max_dis;
    } else if (strategy == "sum_dis") {
      s3.strategy = align::SelectionStrategy::sum_dis;
    } else {
      throw ConfigError("config: stage3.strategy must be 'max_dis' or 'sum_dis'");
    }
    s->finish();
  }
  if (auto s = root.child("protocol")) {
    std::string name = to_string(run.protocol);
    s->get("name", name);
    run.protocol = harness::protocol_from_string(name);
    s->get("theta", run.theta);
    s->get("segment_len", run.segment_len);
    s->get("workers", run.workers);
    s->finish();
  }
  if (auto s = root.child("ablation")) {
    s->get("variants", c.variants);
    if (auto w = s->child("sweep")) {
      w->get("lo", c.sweep.lo);
      w->get("hi", c.sweep.hi);
      w->get("step", c.sweep.step);
      w->finish();
    }
    s->finish();
  }
  root.get("seeds", run.seeds);
  root.get("output_dir", c.output_dir);
  root.finish();
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is, nullptr, true, false);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

/// Fully resolved configuration, suitable for echoing next to outputs and
/// for reparsing with parse_config.
inline json to_json(const AppConfig& c) {
  const auto& d = c.dataset;
  const auto& r = c.run;
  json j;
  j["dataset"] = {{"name", d.name},
                  {"n_subjects", d.n_subjects},
                  {"samples_per_subject", d.samples_per_subject},
                  {"time_len", d.time_len},
                  {"channels", d.channels},
                  {"n_domains", d.n_domains},
                  {"class_amplitude", d.class_amplitude},
                  {"gains", d.resolved_gains()},
                  {"offsets", d.resolved_offsets()},
                  {"class_signs", d.resolved_class_signs()},
                  {"noise", d.noise},
                  {"positive_fraction", d.resolved_positive_fraction()},
                  {"label_skew", d.label_skew},
                  {"period", d.period},
                  {"subject_phase", d.subject_phase},
                  {"sample_phase", d.sample_phase},
                  {"seed", d.seed}};
  if (c.data_path) j["dataset"]["path"] = *c.data_path;
  j["stage1"] = {{"preset", to_string(r.stage1.preset)},
                 {"epochs", r.stage1.epochs},
                 {"lr", r.stage1.lr},
                 {"weight_decay", r.stage1.weight_decay},
                 {"batch_size", r.stage1.batch_size},
                 {"augment",
                  {{"jitter", r.stage1.augment.jitter},
                   {"scale_lo", r.stage1.augment.scale_lo},
                   {"scale_hi", r.stage1.augment.scale_hi},
                   {"mask_fraction", r.stage1.augment.mask_fraction}}}};
  j["stage2"] = {{"k_min", r.stage2.k_min},
                 {"k_max", r.stage2.k_max},
                 {"space", r.stage2.space == latent::GmmSpace::pca2d ? "pca2d" : "full"},
                 {"restarts", r.stage2.gmm.restarts},
                 {"max_iterations", r.stage2.gmm.max_iterations},
                 {"tolerance", r.stage2.gmm.tolerance},
                 {"ridge", r.stage2.gmm.ridge}};
  j["stage3"] = {{"m", r.stage3.m},
                 {"alpha", r.stage3.alpha},
                 {"lr", r.stage3.lr},
                 {"weight_decay", r.stage3.weight_decay},
                 {"batch_size", r.stage3.batch_size},
                 {"epochs", r.stage3.epochs},
                 {"plateau_window", r.stage3.plateau_window},
                 {"plateau_tolerance", r.stage3.plateau_tolerance},
                 {"preset", to_string(r.stage3.preset)},
                 {"update", to_string(r.stage3.update)},
                 {"strategy", to_string(r.stage3.strategy)},
                 {"mode", r.variant}};
  j["protocol"] = {{"name", to_string(r.protocol)},
                   {"theta", r.theta},
                   {"segment_len", r.segment_len},
                   {"workers", r.workers}};
  j["ablation"] = {{"variants", c.variants}, {"sweep", {{"lo", c.sweep.lo}, {"hi", c.sweep.hi}, {"step", c.sweep.step}}}};
  j["seeds"] = r.seeds;
  if (c.output_dir) j["output_dir"] = *c.output_dir;
  return j;
}

// The echo inside report.json leaves out settings that cannot change results.
inline json result_relevant(json j) {
  j["protocol"].erase("workers");
  j.erase("output_dir");
  if (j.contains("dataset")) j["dataset"].erase("path");
  return j;
}

}  // namespace mssda::config
