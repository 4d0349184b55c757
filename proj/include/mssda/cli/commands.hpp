#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mssda/config.hpp"
#include "mssda/data/dataset.hpp"
#include "mssda/data/synthetic.hpp"
#include "mssda/errors.hpp"
#include "mssda/harness/run.hpp"
#include "mssda/parallel.hpp"

namespace mssda::cli {

enum ExitCode : int { ok = 0, input_error = 1, partial_failure = 2 };

/// Command-line values; unset fields fall back to the config document.
struct Options {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool force = false;
  std::optional<std::string> protocol;
  std::optional<std::string> variants;  // comma separated
  std::optional<std::string> sweep;     // LO:HI:STEP
  std::optional<std::string> report;    // existing report.json
  std::optional<double> theta;
};

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline config::SweepSpec parse_sweep(const std::string& s) {
  const auto parts = split_list(s, ':');
  if (parts.size() != 3) throw ConfigError("--sweep expects LO:HI:STEP, got '" + s + "'");
  try {
    return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
  } catch (const std::exception&) {
    throw ConfigError("--sweep expects numbers, got '" + s + "'");
  }
}

inline config::AppConfig resolve(const Options& o) {
  config::AppConfig c = o.config ? config::load_config(*o.config) : config::AppConfig{};
  if (o.seed) {
    c.run.seeds = {*o.seed};
    c.dataset.seed = *o.seed;
  }
  if (o.workers) c.run.workers = *o.workers;
  if (o.protocol) c.run.protocol = harness::protocol_from_string(*o.protocol);
  if (o.variants) c.variants = split_list(*o.variants, ',');
  if (o.sweep) c.sweep = parse_sweep(*o.sweep);
  if (o.data) c.data_path = *o.data;
  if (o.out) c.output_dir = *o.out;
  return c;
}

inline std::filesystem::path require_out(const config::AppConfig& c) {
  if (!c.output_dir) throw ConfigError("missing config key 'output_dir' (or pass --out)");
  return *c.output_dir;
}

inline std::filesystem::path require_data(const config::AppConfig& c) {
  if (!c.data_path) throw ConfigError("missing config key 'dataset.path' (or pass --data)");
  return *c.data_path;
}

/// Refuses an existing non-empty directory unless forced; creates it otherwise.
inline void prepare_out_dir(const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("output directory " + dir.string() + " is not empty (pass --force to overwrite)");
    }
  }
  fs::create_directories(dir);
}

inline void echo_config(const std::filesystem::path& dir, const config::AppConfig& c) {
  harness::write_text(dir / "config.json", config::to_json(c).dump(2) + "\n");
}

inline void print_summary(std::ostream& os, const harness::RunReport& r) {
  const auto s = harness::summarize(r);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s acc=%.4f (sd %.4f) prec=%.4f rec=%.4f spec=%.4f f1=%.4f failed=%zu",
                r.variant.c_str(), s.mean.accuracy, s.accuracy_sd, s.mean.precision, s.mean.recall,
                s.mean.specificity, s.mean.f1, r.failed_folds());
  os << buf << '\n';
}

inline int cmd_generate(const Options& o, std::ostream& log) {
  const auto c = resolve(o);
  const auto out = require_out(c);
  c.dataset.validate();
  prepare_out_dir(out, o.force);
  const auto gen = data::generate_synthetic(c.dataset);
  data::save_dataset(gen.dataset, out);
  data::save_ground_truth(gen, out);
  echo_config(out, c);
  log << "wrote " << gen.dataset.subjects.size() << " subjects to " << out.string() << '\n';
  return ok;
}

inline harness::RunReport run_and_write(const config::AppConfig& c, const std::filesystem::path& out,
                                        std::ostream& log) {
  const auto d = data::load_dataset(require_data(c));
  harness::RunOptions opt;
  opt.artifacts = out;
  opt.config = config::result_relevant(config::to_json(c));
  auto r = harness::run_loso(d, c.run, opt);
  harness::write_report(out / "report.json", r);
  harness::write_text(out / "metrics.csv", harness::metrics_csv({r}));
  print_summary(log, r);
  for (const auto& s : r.seeds) {
    for (const auto& f : s.folds) {
      if (f.failed) log << "fold " << f.subject << " (seed " << s.seed << ") failed: " << f.error << '\n';
    }
  }
  return r;
}

inline int cmd_run(const Options& o, std::ostream& log) {
  const auto c = resolve(o);
  c.run.validate();
  const auto out = require_out(c);
  require_data(c);
  prepare_out_dir(out, o.force);
  echo_config(out, c);
  const auto r = run_and_write(c, out, log);
  return r.failed_folds() ? partial_failure : ok;
}

inline int cmd_ablate(const Options& o, std::ostream& log) {
  const auto c = resolve(o);
  c.run.validate();
  const auto variants = harness::parse_variants(c.variants, c.run.stage3.m, c.run.stage3.strategy);
  const auto out = require_out(c);
  const auto d = data::load_dataset(require_data(c));
  prepare_out_dir(out, o.force);
  echo_config(out, c);
  harness::RunOptions opt;
  opt.config = config::result_relevant(config::to_json(c));
  const auto reports = harness::run_ablation(d, c.run, variants, opt);
  bool failed = false;
  for (const auto& r : reports) {
    harness::write_report(out / r.variant / "report.json", r);
    print_summary(log, r);
    failed = failed || r.failed_folds() > 0;
  }
  harness::write_text(out / "metrics.csv", harness::metrics_csv(reports));
  return failed ? partial_failure : ok;
}

inline int cmd_sweep(const Options& o, std::ostream& log) {
  const auto c = resolve(o);
  const auto out = require_out(c);
  const auto thetas = harness::theta_grid(c.sweep.lo, c.sweep.hi, c.sweep.step);
  harness::RunReport r;
  if (o.report) {
    std::ifstream is(*o.report);
    if (!is) throw InputError("cannot open report " + *o.report);
    prepare_out_dir(out, o.force);
    r = harness::report_from_json(nlohmann::json::parse(is));
  } else {
    c.run.validate();
    require_data(c);
    prepare_out_dir(out, o.force);
    echo_config(out, c);
    r = run_and_write(c, out, log);
  }
  const auto rows = harness::threshold_sweep(r, thetas);
  harness::write_text(out / "sweep.csv", harness::sweep_csv(rows));
  log << "wrote " << rows.size() << " thresholds to " << (out / "sweep.csv").string() << '\n';
  return r.failed_folds() ? partial_failure : ok;
}

inline int cmd_metrics(const Options& o, std::ostream& log) {
  if (!o.report) throw ConfigError("metrics needs --report PATH");
  std::ifstream is(*o.report);
  if (!is) throw InputError("cannot open report " + *o.report);
  auto r = harness::report_from_json(nlohmann::json::parse(is));
  if (o.theta) {
    if (!(*o.theta >= 0.0 && *o.theta <= 1.0)) throw ConfigError("--theta must be in [0, 1]");
    r.theta = *o.theta;
  }
  print_summary(log, r);
  if (o.out) {
    std::filesystem::create_directories(*o.out);
    harness::write_text(std::filesystem::path(*o.out) / "metrics.csv", harness::metrics_csv({r}));
  }
  return r.failed_folds() ? partial_failure : ok;
}

/// Runs a subcommand and maps errors to exit codes.
inline int dispatch(const std::string& command, const Options& o, std::ostream& log, std::ostream& err) {
  try {
    if (command == "generate") return cmd_generate(o, log);
    if (command == "run") return cmd_run(o, log);
    if (command == "ablate") return cmd_ablate(o, log);
    if (command == "sweep") return cmd_sweep(o, log);
    if (command == "metrics") return cmd_metrics(o, log);
    err << "error: unknown command '" << command << "'\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return input_error;
}

}  // namespace mssda::cli
