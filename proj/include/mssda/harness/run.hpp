#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/align/selection.hpp"
#include "mssda/align/stage3.hpp"
#include "mssda/contrastive/stage1.hpp"
#include "mssda/data/dataset.hpp"
#include "mssda/errors.hpp"
#include "mssda/harness/protocol.hpp"
#include "mssda/harness/variant.hpp"
#include "mssda/latent/domains.hpp"
#include "mssda/latent/feature_stats.hpp"
#include "mssda/parallel.hpp"
#include "mssda/random.hpp"

namespace mssda::harness {

struct ProtocolConfig {
  Protocol protocol = Protocol::subject_vote;
  double theta = 0.5;
  std::size_t segment_len = 11;
  contrastive::Stage1Config stage1;
  latent::Stage2Config stage2;
  align::Stage3Config stage3;
  std::string variant = "mssda";
  std::vector<std::uint64_t> seeds{0};
  std::size_t workers = 0;  // concurrent fold jobs, 0 = one per core

  void validate() const {
    if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("protocol: theta must be in (0, 1]");
    if (segment_len < 1) throw ConfigError("protocol: segment_len must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (stage2.k_min < 1 || stage2.k_min > stage2.k_max) throw ConfigError("stage2: need 1 <= k_min <= k_max");
    stage1.validate();
    stage3.validate();
    parse_variant(variant, stage3.m, stage3.strategy);
  }
};

// ---------------------------------------------------------------------------
// Per-seed shared stages

/// Stage 1 and Stage 2 outputs for one seed. Both stages see D_Total, which
/// is the whole dataset in every fold, and neither reads labels, so one
/// context serves every held-out subject.
struct SeedContext {
  std::uint64_t seed = 0;
  std::vector<const data::Sample*> samples;  // dataset order
  std::vector<std::size_t> subject_offset;   // first global index per subject
  contrastive::Stage1Result stage1;
  std::vector<latent::FeatureStats> stats;
  latent::LatentDomains domains;
  std::vector<int> assignment;  // argmax component per sample
};

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return splitmix64(seed ^ splitmix64(stage)); }

inline SeedContext prepare_seed(const data::Dataset& d, const ProtocolConfig& cfg, std::uint64_t seed) {
  if (d.subjects.size() < 2) throw InputError("run: need at least 2 subjects");
  SeedContext ctx;
  ctx.seed = seed;
  std::vector<std::span<const double>> pool;
  for (const auto& s : d.subjects) {
    ctx.subject_offset.push_back(ctx.samples.size());
    for (const auto& x : s.samples) {
      ctx.samples.push_back(&x);
      pool.push_back(x.values);
    }
  }
  auto s1 = cfg.stage1;
  s1.seed = stage_seed(seed, 1);
  ctx.stage1 = contrastive::train_stage1(pool, d.time_len, d.channels, s1);
  for (const auto& m : contrastive::feature_maps(ctx.stage1.extractor, ctx.stage1.normalizer, pool, d.time_len,
                                                 d.channels)) {
    ctx.stats.push_back(latent::feature_stats(m));
  }
  auto s2 = cfg.stage2;
  s2.seed = stage_seed(seed, 2);
  ctx.domains = latent::discover_latent_domains(ctx.stats, s2);
  std::vector<std::size_t> all(ctx.samples.size());
  std::iota(all.begin(), all.end(), 0);
  ctx.assignment = latent::assign_pseudo_domains(ctx.domains, all).labels;
  return ctx;
}

inline std::vector<SeedContext> prepare_seeds(const data::Dataset& d, const ProtocolConfig& cfg) {
  std::vector<SeedContext> out(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) { out[i] = prepare_seed(d, cfg, cfg.seeds[i]); });
  return out;
}

// ---------------------------------------------------------------------------
// Folds

struct FoldResult {
  std::string subject;
  int truth = 0;
  bool failed = false;
  std::string error;
  std::size_t k = 0;
  std::vector<double> distances;              // per cluster, under the variant's distance
  std::vector<std::size_t> source_counts;     // source samples per cluster
  std::vector<std::size_t> selected;          // clusters feeding the branches
  std::vector<std::size_t> branch_epochs;
  std::vector<double> p1;                     // averaged P(y = 1) per target sample
  std::vector<int> labels;                    // hard labels per target sample
};

/// Unit-level votes for one fold: one per subject or one per segment.
inline std::vector<int> fold_votes(const FoldResult& f, Protocol p, double theta, std::size_t segment_len) {
  if (f.failed || f.labels.empty()) return {};
  if (p == Protocol::subject_vote) return {vote_subject(f.labels, theta)};
  return segment_vote(f.labels, segment_len, theta);
}

inline FoldResult run_fold(const data::Dataset& d, const SeedContext& ctx, std::size_t fold, const Variant& v,
                           const ProtocolConfig& cfg, const std::filesystem::path* artifacts = nullptr) {
  const auto& held = d.subjects.at(fold);
  FoldResult r;
  r.subject = held.id;
  const auto split = data::loso_split(d, held.id);
  r.truth = split.target_label;
  const std::size_t k = ctx.domains.k();
  r.k = k;

  // Source samples per cluster, in dataset order.
  std::vector<std::vector<const data::Sample*>> clusters(k);
  for (std::size_t s = 0; s < d.subjects.size(); ++s) {
    if (s == fold) continue;
    for (std::size_t i = 0; i < d.subjects[s].samples.size(); ++i) {
      const std::size_t g = ctx.subject_offset[s] + i;
      clusters[static_cast<std::size_t>(ctx.assignment[g])].push_back(ctx.samples[g]);
    }
  }
  for (const auto& c : clusters) r.source_counts.push_back(c.size());

  std::vector<std::size_t> tidx(held.samples.size());
  std::iota(tidx.begin(), tidx.end(), ctx.subject_offset[fold]);
  const auto target2d = ctx.domains.coords.subset(tidx);
  std::vector<double> masked(k);
  std::size_t eligible = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& center = ctx.domains.centers[c];
    r.distances.push_back(v.strategy == align::SelectionStrategy::sum_dis
                              ? align::domain_distance_sum(target2d, center)
                              : align::domain_distance_max(target2d, center));
    // Clusters without source samples cannot feed a branch.
    masked[c] = clusters[c].empty() ? std::numeric_limits<double>::infinity() : r.distances[c];
    eligible += clusters[c].empty() ? 0 : 1;
  }
  if (eligible == 0) throw InputError("fold " + held.id + ": no cluster holds source samples");

  std::vector<align::BranchJob> jobs;
  auto sel = align::select_subdomains(masked, 0, align::SelectionStrategy::all);
  sel.selected.resize(eligible);
  switch (v.mode) {
    case AlignMode::mssda:
    case AlignMode::sa_selected:
      sel.selected.resize(std::min(v.m, eligible));
      break;
    case AlignMode::single:
      if (v.k >= k) {
        throw InputError("variant " + v.name + ": cluster " + std::to_string(v.k) + " does not exist (K=" +
                         std::to_string(k) + ")");
      }
      if (clusters[v.k].empty()) throw InputError("variant " + v.name + ": cluster has no source samples");
      sel.selected = {v.k};
      break;
    default:
      break;
  }
  r.selected = sel.selected;
  switch (v.mode) {
    case AlignMode::mssda:
    case AlignMode::ma_all:
    case AlignMode::single:
      for (auto c : r.selected) jobs.push_back({static_cast<int>(c), clusters[c], c + 1});
      break;
    case AlignMode::sa_selected: {
      align::BranchJob job{-1, {}, 0x5A};
      for (std::size_t s = 0; s < d.subjects.size(); ++s) {
        if (s == fold) continue;
        for (std::size_t i = 0; i < d.subjects[s].samples.size(); ++i) {
          const std::size_t g = ctx.subject_offset[s] + i;
          const auto c = static_cast<std::size_t>(ctx.assignment[g]);
          if (std::find(r.selected.begin(), r.selected.end(), c) != r.selected.end()) {
            job.source.push_back(ctx.samples[g]);
          }
        }
      }
      jobs.push_back(std::move(job));
      break;
    }
    case AlignMode::sa_all:
    case AlignMode::erm:
      jobs.push_back({-1, split.source, 0xA11});
      break;
  }

  auto s3 = cfg.stage3;
  s3.seed = stage_seed(ctx.seed, 3 + 0x100 * (fold + 1));
  if (v.mode == AlignMode::erm) s3.alpha = 0.0;
  auto branches = align::train_stage3(jobs, split.target, d.time_len, d.channels, ctx.stage1.normalizer, s3);
  for (const auto& b : branches) r.branch_epochs.push_back(b.epochs_run);
  const auto pred = align::predict(branches, split.target, d.time_len, d.channels, ctx.stage1.normalizer);
  r.p1 = pred.p1;
  r.labels = pred.labels;
  if (artifacts) align::write_stage3_artifacts(*artifacts / held.id, sel, branches);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct SeedRun {
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::vector<FoldResult> folds;
};

struct RunReport {
  std::string variant;
  Protocol protocol = Protocol::subject_vote;
  double theta = 0.5;
  std::size_t segment_len = 11;
  std::vector<SeedRun> seeds;
  nlohmann::json config;  // resolved configuration echo
  double wall_clock_seconds = 0.0;

  std::size_t failed_folds() const {
    std::size_t n = 0;
    for (const auto& s : seeds) {
      for (const auto& f : s.folds) n += f.failed ? 1 : 0;
    }
    return n;
  }
};

/// Confusion counts of one seed's non-failed folds at threshold theta.
inline Counts seed_counts(const SeedRun& s, Protocol p, double theta, std::size_t segment_len) {
  Counts c;
  for (const auto& f : s.folds) {
    const auto votes = fold_votes(f, p, theta, segment_len);
    const std::vector<int> truth(votes.size(), f.truth);
    c += confusion(votes, truth);
  }
  return c;
}

inline std::vector<Metrics> seed_metrics(const RunReport& r, double theta) {
  std::vector<Metrics> out;
  for (const auto& s : r.seeds) out.push_back(metrics_from_counts(seed_counts(s, r.protocol, theta, r.segment_len)));
  return out;
}

/// Per-metric mean over seeds. Counts are pooled over seeds.
struct Summary {
  Metrics mean;
  double accuracy_sd = 0.0;
  std::vector<double> seed_accuracy;
};

inline Summary summarize(const RunReport& r, double theta) {
  const auto per = seed_metrics(r, theta);
  Summary s;
  for (const auto& m : per) {
    s.mean.counts += m.counts;
    s.mean.precision += m.precision;
    s.mean.recall += m.recall;
    s.mean.specificity += m.specificity;
    s.mean.accuracy += m.accuracy;
    s.mean.f1 += m.f1;
    s.mean.degenerate = s.mean.degenerate || m.degenerate;
    s.seed_accuracy.push_back(m.accuracy);
  }
  const double n = static_cast<double>(std::max<std::size_t>(per.size(), 1));
  s.mean.precision /= n;
  s.mean.recall /= n;
  s.mean.specificity /= n;
  s.mean.accuracy /= n;
  s.mean.f1 /= n;
  double var = 0.0;
  for (double a : s.seed_accuracy) var += (a - s.mean.accuracy) * (a - s.mean.accuracy);
  s.accuracy_sd = std::sqrt(var / n);
  return s;
}

inline Summary summarize(const RunReport& r) { return summarize(r, r.theta); }

struct SweepRow {
  double theta = 0.0;
  double accuracy = 0.0;
  std::size_t positives = 0;  // positive-voted units pooled over seeds
};

/// Re-votes the stored per-sample predictions at each theta; nothing is retrained.
inline std::vector<SweepRow> threshold_sweep(const RunReport& r, std::span<const double> thetas) {
  std::vector<SweepRow> rows;
  for (double t : thetas) {
    const auto s = summarize(r, t);
    rows.push_back({t, s.mean.accuracy, s.mean.counts.tp + s.mean.counts.fp});
  }
  return rows;
}

/// lo, lo+step, ... up to hi inclusive (with a 1e-9 step-relative slack).
inline std::vector<double> theta_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw ConfigError("sweep: need step > 0 and hi >= lo");
  if (lo < 0.0 || hi > 1.0) throw ConfigError("sweep: thresholds must lie in [0, 1]");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

inline nlohmann::json to_json(const FoldResult& f) {
  nlohmann::json j{{"subject", f.subject}, {"truth", f.truth}, {"failed", f.failed}};
  if (f.failed) {
    j["error"] = f.error;
    return j;
  }
  j["k"] = f.k;
  j["distances"] = f.distances;
  j["source_counts"] = f.source_counts;
  j["selected"] = f.selected;
  j["branch_epochs"] = f.branch_epochs;
  j["p1"] = f.p1;
  j["labels"] = f.labels;
  return j;
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["variant"] = r.variant;
  j["protocol"] = to_string(r.protocol);
  j["theta"] = r.theta;
  j["segment_len"] = r.segment_len;
  j["config"] = r.config;
  const auto summary = summarize(r);
  const auto per = seed_metrics(r, r.theta);
  j["seeds"] = nlohmann::json::array();
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const auto& s = r.seeds[i];
    nlohmann::json js{{"seed", s.seed}, {"k", s.k}, {"metrics", to_json(per[i])}};
    js["folds"] = nlohmann::json::array();
    for (const auto& f : s.folds) js["folds"].push_back(to_json(f));
    j["seeds"].push_back(std::move(js));
  }
  j["metrics"] = to_json(summary.mean);
  j["accuracy_sd"] = summary.accuracy_sd;
  j["failed_folds"] = r.failed_folds();
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

/// Report body without the timing field; equal across reruns with the same seeds.
inline nlohmann::json report_body(nlohmann::json j) {
  j.erase("wall_clock_seconds");
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    r.variant = j.at("variant").get<std::string>();
    r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    r.theta = j.at("theta").get<double>();
    r.segment_len = j.at("segment_len").get<std::size_t>();
    r.config = j.value("config", nlohmann::json::object());
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    for (const auto& js : j.at("seeds")) {
      SeedRun s{js.at("seed").get<std::uint64_t>(), js.at("k").get<std::size_t>(), {}};
      for (const auto& jf : js.at("folds")) {
        FoldResult f;
        f.subject = jf.at("subject").get<std::string>();
        f.truth = jf.at("truth").get<int>();
        f.failed = jf.at("failed").get<bool>();
        if (f.failed) {
          f.error = jf.value("error", std::string{});
        } else {
          f.k = jf.at("k").get<std::size_t>();
          f.distances = jf.at("distances").get<std::vector<double>>();
          f.source_counts = jf.at("source_counts").get<std::vector<std::size_t>>();
          f.selected = jf.at("selected").get<std::vector<std::size_t>>();
          f.branch_epochs = jf.at("branch_epochs").get<std::vector<std::size_t>>();
          f.p1 = jf.at("p1").get<std::vector<double>>();
          f.labels = jf.at("labels").get<std::vector<int>>();
        }
        s.folds.push_back(std::move(f));
      }
      r.seeds.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Artifact writers

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
}

inline void write_report(const std::filesystem::path& path, const RunReport& r) {
  write_text(path, to_json(r).dump(2) + "\n");
}

inline std::string metrics_csv(const std::vector<RunReport>& reports) {
  using data::detail::format_double;
  std::string out = "variant,precision,recall,specificity,accuracy,f1,accuracy_sd,tp,fp,fn,tn,failed_folds\n";
  for (const auto& r : reports) {
    const auto s = summarize(r);
    const auto& m = s.mean;
    out += r.variant + ',' + format_double(m.precision) + ',' + format_double(m.recall) + ',' +
           format_double(m.specificity) + ',' + format_double(m.accuracy) + ',' + format_double(m.f1) + ',' +
           format_double(s.accuracy_sd) + ',' + std::to_string(m.counts.tp) + ',' + std::to_string(m.counts.fp) +
           ',' + std::to_string(m.counts.fn) + ',' + std::to_string(m.counts.tn) + ',' +
           std::to_string(r.failed_folds()) + '\n';
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "theta,accuracy\n";
  for (const auto& row : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", row.theta);
    out += std::string(buf) + ',' + data::detail::format_double(row.accuracy) + '\n';
  }
  return out;
}

/// stage1_loss.csv plus stage2/{stats.csv, clusters.json, assignments.csv}.
/// Assignments cover every sample; a fold only trains on its source rows.
inline void write_seed_artifacts(const std::filesystem::path& dir, const SeedContext& ctx) {
  using data::detail::format_double;
  std::filesystem::create_directories(dir / "stage2");
  contrastive::write_loss_curve(ctx.stage1.loss_curve, dir / "stage1_loss.csv");
  const std::size_t ch = ctx.stats.front().mu.size();
  std::string stats = "subject,sample";
  for (std::size_t c = 0; c < ch; ++c) stats += ",mu" + std::to_string(c);
  for (std::size_t c = 0; c < ch; ++c) stats += ",sigma" + std::to_string(c);
  stats += '\n';
  std::string assign = "subject,sample,cluster,pc1,pc2\n";
  for (std::size_t g = 0; g < ctx.samples.size(); ++g) {
    const auto* x = ctx.samples[g];
    stats += x->subject_id + ',' + std::to_string(x->index);
    for (double v : ctx.stats[g].mu) stats += ',' + format_double(v);
    for (double v : ctx.stats[g].sigma) stats += ',' + format_double(v);
    stats += '\n';
    const auto z = ctx.domains.coords.row(g);
    assign += x->subject_id + ',' + std::to_string(x->index) + ',' + std::to_string(ctx.assignment[g]) + ',' +
              format_double(z[0]) + ',' + format_double(z[1]) + '\n';
  }
  write_text(dir / "stage2" / "stats.csv", stats);
  write_text(dir / "stage2" / "assignments.csv", assign);

  const auto& m = ctx.domains.model();
  nlohmann::json j;
  j["space"] = ctx.domains.space == latent::GmmSpace::pca2d ? "pca2d" : "full";
  j["k"] = ctx.domains.k();
  j["bic"] = nlohmann::json::array();
  for (const auto& row : ctx.domains.selection.table) {
    j["bic"].push_back({{"k", row.k}, {"bic", row.bic}, {"log_likelihood", row.log_likelihood}});
  }
  j["weights"] = m.weights;
  j["means"] = m.means;
  j["covariances"] = m.covs;
  j["centers"] = ctx.domains.centers;
  j["em_iterations"] = m.iterations;
  j["converged"] = m.converged;
  j["pca"] = {{"mean", ctx.domains.pca.mean},
              {"components", ctx.domains.pca.components},
              {"explained_variance", ctx.domains.pca.explained_variance},
              {"degenerate", ctx.domains.pca.degenerate}};
  write_text(dir / "stage2" / "clusters.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Drivers

struct RunOptions {
  std::optional<std::filesystem::path> artifacts;  // per-seed and per-fold outputs
  nlohmann::json config = nlohmann::json::object();
};

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

/// Runs every (seed, fold) job of one variant on prepared contexts. A fold
/// that throws is recorded as failed and the run continues.
inline RunReport run_variant(const data::Dataset& d, const std::vector<SeedContext>& contexts,
                             const ProtocolConfig& cfg, const Variant& v, const RunOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport r;
  r.variant = v.name;
  r.protocol = cfg.protocol;
  r.theta = cfg.theta;
  r.segment_len = cfg.segment_len;
  r.config = opt.config;
  const std::size_t folds = d.subjects.size();
  for (const auto& ctx : contexts) r.seeds.push_back({ctx.seed, ctx.domains.k(), std::vector<FoldResult>(folds)});
  parallel_for(contexts.size() * folds, cfg.workers, [&](std::size_t job) {
    const std::size_t si = job / folds, fi = job % folds;
    std::optional<std::filesystem::path> dir;
    if (opt.artifacts) dir = *opt.artifacts / seed_dir_name(contexts[si].seed) / "folds";
    FoldResult& out = r.seeds[si].folds[fi];
    try {
      out = run_fold(d, contexts[si], fi, v, cfg, dir ? &*dir : nullptr);
    } catch (const std::exception& e) {
      out = FoldResult{};
      out.subject = d.subjects[fi].id;
      out.truth = d.subjects[fi].label;
      out.failed = true;
      out.error = e.what();
    }
  });
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline RunReport run_loso(const data::Dataset& d, const ProtocolConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto contexts = prepare_seeds(d, cfg);
  if (opt.artifacts) {
    for (const auto& ctx : contexts) write_seed_artifacts(*opt.artifacts / seed_dir_name(ctx.seed), ctx);
  }
  auto r = run_variant(d, contexts, cfg, parse_variant(cfg.variant, cfg.stage3.m, cfg.stage3.strategy), opt);
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// One report per variant; all variants share the per-seed Stage 1/2 contexts and fold seeds.
inline std::vector<RunReport> run_ablation(const data::Dataset& d, const ProtocolConfig& cfg,
                                           const std::vector<Variant>& variants, const RunOptions& opt = {},
                                           const std::vector<SeedContext>* prepared = nullptr) {
  cfg.validate();
  std::vector<SeedContext> own;
  if (!prepared) {
    own = prepare_seeds(d, cfg);
    prepared = &own;
  }
  std::vector<RunReport> out;
  RunOptions per = opt;
  per.artifacts.reset();
  for (const auto& v : variants) out.push_back(run_variant(d, *prepared, cfg, v, per));
  return out;
}

}  // namespace mssda::harness
