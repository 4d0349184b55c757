#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mssda/align/selection.hpp"
#include "mssda/data/dataset.hpp"
#include "mssda/data/presets.hpp"
#include "mssda/errors.hpp"
#include "mssda/nn/checkpoint.hpp"
#include "mssda/nn/graph.hpp"
#include "mssda/nn/network.hpp"
#include "mssda/nn/optim.hpp"
#include "mssda/parallel.hpp"
#include "mssda/random.hpp"

namespace mssda::align {

// grl: one joint step, D descends L_adv and F receives -alpha * dL_adv through
// the reversal layer. alternating: D step on detached features, then an F/C
// step against the frozen D.
enum class UpdateMode { grl, alternating };

inline const char* to_string(UpdateMode m) { return m == UpdateMode::grl ? "grl" : "alternating"; }

inline UpdateMode update_mode_from_string(const std::string& s) {
  if (s == "grl") return UpdateMode::grl;
  if (s == "alternating") return UpdateMode::alternating;
  throw ConfigError("unknown update mode '" + s + "' (valid: grl, alternating)");
}

struct Stage3Config {
  std::size_t m = 2;
  double alpha = 1.0;
  double lr = 5e-3;
  double weight_decay = 1e-4;  // Adam, L2-coupled
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::size_t plateau_window = 10;
  double plateau_tolerance = 1e-3;  // relative spread of the epoch L_cls over the window
  data::ArchPreset preset = data::ArchPreset::dfn;
  UpdateMode update = UpdateMode::grl;
  SelectionStrategy strategy = SelectionStrategy::max_dis;
  std::uint64_t seed = 0;

  static constexpr double alpha_grid[] = {0.2, 0.5, 1.0, 2.0};
  static constexpr double lr_grid[] = {1e-2, 8e-3, 5e-3};

  void validate() const {
    if (m < 1) throw ConfigError("stage3: m must be >= 1");
    if (!(alpha >= 0.0)) throw ConfigError("stage3: alpha must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("stage3: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("stage3: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("stage3: batch_size must be >= 1");
    if (plateau_window < 1) throw ConfigError("stage3: plateau_window must be >= 1");
  }
};

/// One DANN branch: extractor F, classifier C and discriminator D with their
/// own optimizer states. Branches never share parameters.
struct Branch {
  int domain = -1;  // assigned sub-source cluster; -1 for a mixed source
  nn::Network<float> extractor;
  nn::Network<float> classifier;
  nn::Network<float> discriminator;
  nn::Adam<float> opt_f, opt_c, opt_d;
  std::vector<double> cls_curve;  // per epoch, mean over steps
  std::vector<double> adv_curve;
  std::size_t epochs_run = 0;
  bool plateaued = false;
  bool single_class = false;

  Branch(int domain, data::ArchPreset preset, std::size_t channels, std::size_t time_len, std::uint64_t seed,
         const nn::AdamConfig& opt)
      : domain(domain),
        extractor(data::alignment_extractor<float>(preset, channels, time_len, splitmix64(seed ^ 0xF))),
        classifier(data::mlp_head<float>(preset, extractor.output_shape()[0], splitmix64(seed ^ 0xC))),
        discriminator(data::mlp_head<float>(preset, extractor.output_shape()[0], splitmix64(seed ^ 0xD))),
        opt_f(opt),
        opt_c(opt),
        opt_d(opt) {}

  std::uint64_t checksum() const {
    return splitmix64(extractor.checksum() ^ splitmix64(classifier.checksum() ^ splitmix64(discriminator.checksum())));
  }
};

struct AdversarialLosses {
  nn::Var<float> cls;
  nn::Var<float> adv;
};

/// Records L_cls = CE(C(F(xs)), ys) and L_adv = CE(D(R(F(xs))), 1) + CE(D(R(F(xt))), 0),
/// where R is a gradient reversal with lambda = alpha. Each CE is a batch mean.
/// `detach_features` cuts F out of the adversarial path instead (D-only update).
inline AdversarialLosses adversarial_losses(nn::Graph<float>& g, Branch& b, nn::Var<float> xs,
                                            std::span<const int> ys, nn::Var<float> xt, double alpha,
                                            bool detach_features = false) {
  auto fs = b.extractor.forward(g, xs);
  auto ft = b.extractor.forward(g, xt);
  auto cls = nn::cross_entropy(g, b.classifier.forward(g, fs), ys);
  auto route = [&](nn::Var<float> f) {
    return detach_features ? nn::detach(g, f) : nn::grad_reverse(g, f, static_cast<float>(alpha));
  };
  const std::vector<int> ones(g.value(xs).dim(0), 1), zeros(g.value(xt).dim(0), 0);
  auto adv = nn::add(g, nn::cross_entropy(g, b.discriminator.forward(g, route(fs)), std::span<const int>(ones)),
                     nn::cross_entropy(g, b.discriminator.forward(g, route(ft)), std::span<const int>(zeros)));
  return {cls, adv};
}

/// Index stream over a pool: shuffled passes without replacement when the
/// pool covers a batch, uniform draws with replacement otherwise.
class BatchSampler {
 public:
  BatchSampler(std::size_t pool, Rng rng) : order_(pool), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::size_t> next(std::size_t bs) {
    std::vector<std::size_t> out;
    out.reserve(bs);
    if (order_.size() < bs) {
      for (std::size_t k = 0; k < bs; ++k) out.push_back(rng_.index(order_.size()));
      return out;
    }
    for (std::size_t k = 0; k < bs; ++k) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

struct BranchData {
  std::span<const data::Sample* const> source;  // balanced, labeled
  std::span<const data::UnlabeledView> target;
  std::size_t time_len = 0;
  std::size_t channels = 0;
  const data::ChannelNormalizer* norm = nullptr;
};

/// Trains one branch for the epoch budget or until L_cls plateaus.
/// With alpha = 0 the adversarial path is skipped; F and C updates are then
/// exactly source-only ERM.
inline void train_branch(Branch& b, std::size_t branch_index, const BranchData& d, const Stage3Config& cfg,
                         Rng rng) {
  if (d.source.empty()) throw InputError("stage3: branch " + std::to_string(branch_index) + " has no source samples");
  if (d.target.empty()) throw InputError("stage3: no target samples");
  const bool adversarial = cfg.alpha > 0.0;
  BatchSampler src(d.source.size(), rng.fork(1));
  BatchSampler tgt(d.target.size(), rng.fork(2));
  const std::size_t steps = (d.source.size() + cfg.batch_size - 1) / cfg.batch_size;
  auto pf = b.extractor.parameter_ptrs();
  auto pc = b.classifier.parameter_ptrs();
  auto pd = b.discriminator.parameter_ptrs();
  nn::Graph<float> g;
  std::vector<std::span<const double>> xs_values, xt_values;
  std::vector<int> ys;

  auto zero_all = [&] {
    b.extractor.zero_grad();
    b.classifier.zero_grad();
    b.discriminator.zero_grad();
  };
  auto check = [&](double v, std::size_t epoch) {
    if (!std::isfinite(v)) {
      throw NumericError("stage3: non-finite loss in branch " + std::to_string(branch_index) + " at epoch " +
                         std::to_string(epoch));
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double cls_sum = 0.0, adv_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      xs_values.clear();
      ys.clear();
      for (std::size_t i : src.next(cfg.batch_size)) {
        xs_values.push_back(d.source[i]->values);
        ys.push_back(d.source[i]->label);
      }
      const auto bs = data::to_batch<float>(xs_values, d.time_len, d.channels, *d.norm);
      if (!adversarial) {
        g.reset();
        zero_all();
        auto cls = nn::cross_entropy(g, b.classifier.forward(g, b.extractor.forward(g, g.input(bs))),
                                     std::span<const int>(ys));
        check(g.value(cls).item(), epoch);
        g.backward(cls);
        b.opt_f.step(pf);
        b.opt_c.step(pc);
        cls_sum += g.value(cls).item();
        continue;
      }
      xt_values.clear();
      for (std::size_t i : tgt.next(cfg.batch_size)) xt_values.push_back(d.target[i].values());
      const auto bt = data::to_batch<float>(xt_values, d.time_len, d.channels, *d.norm);

      if (cfg.update == UpdateMode::grl) {
        g.reset();
        zero_all();
        auto l = adversarial_losses(g, b, g.input(bs), ys, g.input(bt), cfg.alpha);
        check(g.value(l.cls).item(), epoch);
        check(g.value(l.adv).item(), epoch);
        g.backward(nn::add(g, l.cls, l.adv));
        b.opt_f.step(pf);
        b.opt_c.step(pc);
        b.opt_d.step(pd);
        cls_sum += g.value(l.cls).item();
        adv_sum += g.value(l.adv).item();
      } else {
        g.reset();
        zero_all();
        auto ld = adversarial_losses(g, b, g.input(bs), ys, g.input(bt), cfg.alpha, true);
        check(g.value(ld.adv).item(), epoch);
        g.backward(ld.adv);
        b.opt_d.step(pd);
        adv_sum += g.value(ld.adv).item();

        g.reset();
        zero_all();
        auto lf = adversarial_losses(g, b, g.input(bs), ys, g.input(bt), cfg.alpha);
        check(g.value(lf.cls).item(), epoch);
        g.backward(nn::add(g, lf.cls, lf.adv));
        b.opt_f.step(pf);
        b.opt_c.step(pc);
        cls_sum += g.value(lf.cls).item();
      }
    }
    b.cls_curve.push_back(cls_sum / static_cast<double>(steps));
    b.adv_curve.push_back(adversarial ? adv_sum / static_cast<double>(steps) : 0.0);
    b.epochs_run = epoch + 1;
    if (b.cls_curve.size() > cfg.plateau_window) {
      // Every epoch of the window lies within the tolerance band; comparing two
      // noisy endpoints alone would stop on chance coincidences.
      const auto first = b.cls_curve.end() - static_cast<std::ptrdiff_t>(cfg.plateau_window) - 1;
      const auto [lo, hi] = std::minmax_element(first, b.cls_curve.end());
      const double rel = (*hi - *lo) / std::max(std::abs(*hi), 1e-12);
      if (rel < cfg.plateau_tolerance) {
        b.plateaued = true;
        break;
      }
    }
  }
}

/// One training job: a labeled source pool (a selected cluster or a mixture)
/// and the tag that seeds its branch. Equal tags give equal initial weights.
struct BranchJob {
  int domain = -1;
  std::vector<const data::Sample*> source;
  std::uint64_t tag = 0;
};

/// Trains one independent branch per job against the shared unlabeled
/// target. Source pools are class-balanced by reuse first.
inline std::vector<Branch> train_stage3(const std::vector<BranchJob>& jobs,
                                        std::span<const data::UnlabeledView> target, std::size_t time_len,
                                        std::size_t channels, const data::ChannelNormalizer& norm,
                                        const Stage3Config& cfg, std::size_t workers = 1) {
  cfg.validate();
  if (jobs.empty()) throw InputError("stage3: no branches to train");
  if (target.empty()) throw InputError("stage3: no target samples");
  const auto opt = nn::AdamConfig::adam(cfg.lr, cfg.weight_decay);
  std::vector<Branch> branches;
  std::vector<data::Balanced> pools;
  for (const auto& job : jobs) {
    if (job.source.empty()) throw InputError("stage3: selected domain " + std::to_string(job.domain) + " is empty");
    const std::uint64_t seed = splitmix64(cfg.seed ^ splitmix64(job.tag));
    branches.emplace_back(job.domain, cfg.preset, channels, time_len, seed, opt);
    pools.push_back(data::balance_by_reuse(job.source));
    branches.back().single_class = pools.back().single_class;
  }
  parallel_for(jobs.size(), workers, [&](std::size_t k) {
    const std::uint64_t seed = splitmix64(cfg.seed ^ splitmix64(jobs[k].tag));
    BranchData d{pools[k].samples, target, time_len, channels, &norm};
    train_branch(branches[k], k, d, cfg, Rng(seed).fork(0xB7));
  });
  return branches;
}

struct Prediction {
  std::vector<double> p1;   // averaged probability of class 1
  std::vector<int> labels;  // argmax, ties -> 0
};

/// Averages the branches' softmax outputs over each sample.
inline Prediction average_probabilities(const std::vector<std::vector<std::array<double, 2>>>& per_branch) {
  if (per_branch.empty()) throw InputError("predict: need at least one branch");
  const std::size_t n = per_branch.front().size();
  Prediction out;
  for (std::size_t i = 0; i < n; ++i) {
    double p0 = 0.0, p1 = 0.0;
    for (const auto& b : per_branch) {
      p0 += b[i][0];
      p1 += b[i][1];
    }
    p0 /= static_cast<double>(per_branch.size());
    p1 /= static_cast<double>(per_branch.size());
    out.p1.push_back(p1);
    out.labels.push_back(p1 > p0 ? 1 : 0);
  }
  return out;
}

inline std::vector<std::array<double, 2>> branch_probabilities(Branch& b, std::span<const std::span<const double>> xs,
                                                               std::size_t time_len, std::size_t channels,
                                                               const data::ChannelNormalizer& norm,
                                                               std::size_t batch = 256) {
  std::vector<std::array<double, 2>> out;
  nn::Graph<float> g;
  for (std::size_t start = 0; start < xs.size(); start += batch) {
    const std::size_t end = std::min(xs.size(), start + batch);
    g.reset();
    auto x = g.input(data::to_batch<float>(xs.subspan(start, end - start), time_len, channels, norm));
    const auto p = nn::softmax_rows(g.value(b.classifier.forward(g, b.extractor.forward(g, x))));
    for (std::size_t i = 0; i < end - start; ++i) out.push_back({p.at(i, 0), p.at(i, 1)});
  }
  return out;
}

inline Prediction predict(std::vector<Branch>& branches, std::span<const data::UnlabeledView> target,
                          std::size_t time_len, std::size_t channels, const data::ChannelNormalizer& norm) {
  if (branches.empty()) throw InputError("predict: need at least one branch");
  std::vector<std::span<const double>> xs;
  for (const auto& v : target) xs.push_back(v.values());
  std::vector<std::vector<std::array<double, 2>>> per_branch;
  for (auto& b : branches) per_branch.push_back(branch_probabilities(b, xs, time_len, channels, norm));
  return average_probabilities(per_branch);
}

inline nlohmann::json selection_json(const SelectionResult& s) {
  return {{"strategy", to_string(s.strategy)}, {"distances", s.distances}, {"selected", s.selected}};
}

/// selection.json, branch{k}_loss.csv (epoch, cls, adv) and branch{k}/ checkpoints.
inline void write_stage3_artifacts(const std::filesystem::path& dir, const SelectionResult& sel,
                                   const std::vector<Branch>& branches) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "selection.json", std::ios::trunc) << selection_json(sel).dump(2) << '\n';
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const auto& b = branches[k];
    std::ofstream os(dir / ("branch" + std::to_string(k) + "_loss.csv"), std::ios::trunc);
    os << "epoch,cls,adv\n";
    for (std::size_t e = 0; e < b.cls_curve.size(); ++e) {
      os << e << ',' << data::detail::format_double(b.cls_curve[e]) << ','
         << data::detail::format_double(b.adv_curve[e]) << '\n';
    }
    const auto base = dir / ("branch" + std::to_string(k));
    nn::save_checkpoint(b.extractor, base / "extractor");
    nn::save_checkpoint(b.classifier, base / "classifier");
    nn::save_checkpoint(b.discriminator, base / "discriminator");
  }
}

}  // namespace mssda::align
