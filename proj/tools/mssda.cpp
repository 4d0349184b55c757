// Command-line entry point: generate | run | ablate | sweep | metrics.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mssda/cli/commands.hpp"
#include "mssda/config.hpp"

int main(int argc, char** argv) {
  using mssda::cli::Options;
  Options o;
  CLI::App app{"Multi-source sub-domain adaptation pipeline"};
  app.require_subcommand(1);
  app.footer("Config defaults (every key optional; unknown keys are rejected):\n" +
             mssda::config::to_json(mssda::config::AppConfig{}).dump(2) +
             "\n\nExit codes: 0 ok, 1 config/input error, 2 some folds failed.");

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", o.seed, "single seed (overrides seeds and dataset.seed)");
    cmd->add_flag("--force", o.force, "write into a non-empty output directory");
  };
  auto add_run = [&](CLI::App* cmd) {
    add_common(cmd);
    cmd->add_option("--data", o.data, "dataset directory (overrides dataset.path)");
    cmd->add_option("--workers", o.workers, "concurrent fold jobs (0 = one per core)");
    cmd->add_option("--protocol", o.protocol, "subject_vote | segment_vote");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic planted-domain dataset");
  add_common(gen);
  auto* run = app.add_subcommand("run", "leave-one-subject-out run of the configured variant");
  add_run(run);
  auto* ablate = app.add_subcommand("ablate", "run several variants on shared folds and seeds");
  add_run(ablate);
  ablate->add_option("--variants", o.variants, "comma-separated: " + mssda::harness::valid_variant_names());
  auto* sweep = app.add_subcommand("sweep", "vote-threshold sweep over stored predictions");
  add_run(sweep);
  sweep->add_option("--sweep", o.sweep, "threshold grid LO:HI:STEP");
  sweep->add_option("--report", o.report, "reuse an existing report.json instead of running");
  auto* metrics = app.add_subcommand("metrics", "recompute metrics from a report.json");
  metrics->add_option("--report", o.report, "report.json to score")->required();
  metrics->add_option("--theta", o.theta, "vote threshold (default: the report's)");
  metrics->add_option("--out", o.out, "directory for metrics.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mssda::cli::input_error;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return mssda::cli::dispatch(command, o, std::cout, std::cerr);
}
