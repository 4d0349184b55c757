#pragma once

#include <cstdint>
#include <vector>

#include "mssda/errors.hpp"
#include "mssda/latent/feature_stats.hpp"
#include "mssda/latent/gmm.hpp"
#include "mssda/latent/pca.hpp"
#include "mssda/latent/points.hpp"

namespace mssda::latent {

enum class GmmSpace { pca2d, full };

struct Stage2Config {
  std::size_t k_min = 2;
  std::size_t k_max = 15;
  GmmSpace space = GmmSpace::pca2d;
  GmmOptions gmm;
  std::uint64_t seed = 0;
};

/// Latent-domain model fitted on the statistics of every sample (source and
/// target). Cluster centers live in the 2-D PCA space in both modes.
struct LatentDomains {
  GmmSpace space = GmmSpace::pca2d;
  PcaModel pca;
  KSelection selection;
  Points stats;   // n x 2C
  Points coords;  // n x 2, PCA projection of `stats`
  std::vector<std::vector<double>> centers;  // K x 2

  std::size_t k() const { return selection.k; }
  const GmmModel& model() const { return selection.model; }

  // Points in the space the mixture was fitted in, for the given sample indices.
  Points clustering_points(std::span<const std::size_t> idx) const {
    return space == GmmSpace::pca2d ? coords.subset(idx) : stats.subset(idx);
  }
};

struct DomainAssignment {
  std::vector<int> labels;          // one per assigned sample
  std::vector<std::size_t> counts;  // per component
};

/// Labels each given sample with its argmax-responsibility component.
inline DomainAssignment assign_pseudo_domains(const GmmModel& model, const Points& pts) {
  DomainAssignment a;
  a.labels = assign_components(model, pts);
  a.counts.assign(model.components(), 0);
  for (int l : a.labels) ++a.counts[static_cast<std::size_t>(l)];
  return a;
}

inline DomainAssignment assign_pseudo_domains(const LatentDomains& ld, std::span<const std::size_t> idx) {
  return assign_pseudo_domains(ld.model(), ld.clustering_points(idx));
}

inline LatentDomains discover_latent_domains(const std::vector<FeatureStats>& stats, const Stage2Config& cfg) {
  LatentDomains ld;
  ld.space = cfg.space;
  ld.stats = stats_points(stats);
  ld.pca = fit_pca(ld.stats, 2);
  ld.coords = ld.pca.transform(ld.stats);
  const Points& fit_on = cfg.space == GmmSpace::pca2d ? ld.coords : ld.stats;
  ld.selection = select_k(fit_on, cfg.k_min, cfg.k_max, cfg.seed, cfg.gmm);
  for (const auto& mu : ld.selection.model.means) {
    ld.centers.push_back(cfg.space == GmmSpace::pca2d ? mu : ld.pca.transform(mu));
  }
  return ld;
}

}  // namespace mssda::latent
