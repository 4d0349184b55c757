#include <cmath>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "mssda/contrastive/stage1.hpp"
#include "mssda/data/synthetic.hpp"
#include "oracles.hpp"

using namespace mssda;
using namespace mssda::nn;

namespace {

double loss_of(const oracle::Rows& h, const oracle::Rows& ht) {
  const std::size_t n = h.size(), d = h[0].size();
  Tensor<double> a({n, d}), b({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      a.at(i, k) = h[i][k];
      b.at(i, k) = ht[i][k];
    }
  }
  Graph<double> g;
  return g.value(contrastive_loss(g, g.input(a), g.input(b))).item();
}

oracle::Rows random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  oracle::Rows r(n, std::vector<double>(d));
  for (auto& row : r) {
    double s = 0.0;
    for (auto& v : row) {
      v = rng.normal();
      s += v * v;
    }
    for (auto& v : row) v /= std::sqrt(s);
  }
  return r;
}

struct Pool {
  data::Dataset dataset;
  std::vector<std::span<const double>> views;
};

Pool small_pool(std::size_t subjects, std::size_t per_subject) {
  data::SyntheticSpec spec;
  spec.n_subjects = subjects;
  spec.samples_per_subject = per_subject;
  spec.n_domains = 2;
  Pool p{data::generate_synthetic(spec).dataset, {}};
  for (const auto* s : p.dataset.all_samples()) p.views.emplace_back(s->values);
  return p;
}

contrastive::Stage1Config tiny_config(std::size_t epochs) {
  contrastive::Stage1Config c;
  c.preset = data::ArchPreset::tiny;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(ContrastiveLoss, SingleItemIsZero) {
  EXPECT_NEAR(loss_of({{0.6, 0.8}}, {{0.0, 1.0}}), 0.0, 1e-15);
}

TEST(ContrastiveLoss, IdenticalEmbeddings) {
  for (std::size_t n : {2u, 4u, 7u}) {
    oracle::Rows h(n, {0.6, 0.8});
    EXPECT_NEAR(loss_of(h, h), std::log(2.0 * static_cast<double>(n) - 1.0), 1e-10) << n;
  }
  EXPECT_NEAR(std::log(7.0), 1.9459, 1e-4);
}

TEST(ContrastiveLoss, OrthogonalPair) {
  const oracle::Rows h{{1, 0}, {0, 1}};
  EXPECT_NEAR(loss_of(h, h), std::log((std::numbers::e + 2.0) / std::numbers::e), 1e-10);
  EXPECT_NEAR(std::log((std::numbers::e + 2.0) / std::numbers::e), 0.5514, 1e-4);
}

TEST(ContrastiveLoss, MatchesDirectOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(8), d = 1 + rng.index(6);
    const auto h = random_unit_rows(n, d, rng), ht = random_unit_rows(n, d, rng);
    EXPECT_NEAR(loss_of(h, ht), oracle::contrastive(h, ht), 1e-12);
  }
}

TEST(ContrastiveLoss, PermutationEquivariant) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.index(7);
    const auto h = random_unit_rows(n, 4, rng), ht = random_unit_rows(n, 4, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    oracle::Rows ph, pht;
    for (auto i : perm) {
      ph.push_back(h[i]);
      pht.push_back(ht[i]);
    }
    EXPECT_NEAR(loss_of(h, ht), loss_of(ph, pht), 1e-10);
  }
}

TEST(ContrastiveLoss, PositiveForTwoOrMore) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(6);
    const auto h = random_unit_rows(n, 3, rng), ht = random_unit_rows(n, 3, rng);
    EXPECT_GT(loss_of(h, ht), 0.0);
  }
}

TEST(ContrastiveLoss, MismatchedShapesRejected) {
  Graph<double> g;
  auto a = g.input(Tensor<double>({3, 2}));
  auto b = g.input(Tensor<double>({2, 2}));
  EXPECT_THROW(contrastive_loss(g, a, b), InputError);
}

TEST(Embed, RowsAreUnitNorm) {
  auto net = data::contrastive_extractor<double>(data::ArchPreset::tiny, 4, 32, 1);
  Rng rng(2);
  Tensor<double> x({5, 4, 32});
  for (auto& v : x.buffer()) v = rng.normal();
  Graph<double> g;
  const auto& h = g.value(contrastive::embed(g, net, g.input(x)));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < h.dim(1); ++k) s += h.at(i, k) * h.at(i, k);
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST(Stage1, ZeroEpochsReturnsInitialization) {
  const auto pool = small_pool(4, 4);
  const auto res = contrastive::train_stage1(pool.views, 32, 4, tiny_config(0));
  EXPECT_EQ(res.extractor.checksum(), data::contrastive_extractor<float>(data::ArchPreset::tiny, 4, 32, 4).checksum());
  EXPECT_TRUE(res.loss_curve.empty());
}

TEST(Stage1, DeterministicUnderSeed) {
  const auto pool = small_pool(4, 4);
  const auto a = contrastive::train_stage1(pool.views, 32, 4, tiny_config(3));
  const auto b = contrastive::train_stage1(pool.views, 32, 4, tiny_config(3));
  EXPECT_EQ(a.extractor.checksum(), b.extractor.checksum());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  auto c = tiny_config(3);
  c.seed = 5;
  EXPECT_NE(contrastive::train_stage1(pool.views, 32, 4, c).extractor.checksum(), a.extractor.checksum());
}

TEST(Stage1, InvalidConfigRejected) {
  const auto pool = small_pool(4, 1);
  auto c = tiny_config(1);
  c.batch_size = 1;
  EXPECT_THROW(contrastive::train_stage1(pool.views, 32, 4, c), ConfigError);
  EXPECT_THROW(contrastive::train_stage1(std::span(pool.views).first(1), 32, 4, tiny_config(1)), InputError);
}

// Samples that differ in frequency, amplitude and level. Pooled embeddings
// are nearly shift-invariant, so samples that differ only in phase would be
// indistinguishable by construction.
std::vector<std::vector<double>> distinct_sinusoids(std::size_t n) {
  Rng r(11);
  std::vector<std::vector<double>> raw(n, std::vector<double>(32 * 4));
  for (auto& x : raw) {
    const double w = r.uniform(0.2, 1.5);
    for (std::size_t c = 0; c < 4; ++c) {
      const double a = r.uniform(0.5, 2.0), phase = r.uniform(0.0, 2.0 * std::numbers::pi), b = r.uniform(-1.0, 1.0);
      for (std::size_t t = 0; t < 32; ++t) x[t * 4 + c] = a * std::sin(w * static_cast<double>(t) + phase) + b + 0.05 * r.normal();
    }
  }
  return raw;
}

// Trained embeddings: own augmented view is closer than other samples, and
// the loss goes down.
TEST(Stage1, TrainingSeparatesSamples) {
  const auto raw = distinct_sinusoids(48);
  const std::vector<std::span<const double>> views(raw.begin(), raw.end());
  auto cfg = tiny_config(150);
  const auto res = contrastive::train_stage1(views, 32, 4, cfg);
  ASSERT_EQ(res.loss_curve.size(), 150u);
  EXPECT_LT(res.loss_curve.back(), res.loss_curve.front());

  auto net = res.extractor.cast<double>();
  Rng rng(77);
  std::vector<std::vector<double>> aug;
  for (auto v : views) aug.push_back(data::augment_values(v, 32, 4, cfg.augment, rng));
  std::vector<std::span<const double>> aug_views(aug.begin(), aug.end());
  Graph<double> g;
  const auto h = g.value(contrastive::embed(g, net, g.input(data::to_batch<double>(views, 32, 4, res.normalizer))));
  const auto ht = g.value(contrastive::embed(g, net, g.input(data::to_batch<double>(aug_views, 32, 4, res.normalizer))));
  const std::size_t n = views.size(), d = h.dim(1);
  auto sim = [&](const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a.at(i, k) * b.at(j, k);
    return s;
  };
  double pair = 0.0, across = 0.0;
  std::size_t nn_own = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pair += sim(h, i, ht, i);
    double best = sim(h, i, ht, i);
    bool own = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      across += sim(h, i, h, j);
      if (sim(h, i, h, j) > best || sim(h, i, ht, j) > best) own = false;
    }
    nn_own += own;
  }
  pair /= static_cast<double>(n);
  across /= static_cast<double>(n * (n - 1));
  EXPECT_GT(pair, across);
  EXPECT_GE(static_cast<double>(nn_own), 0.9 * static_cast<double>(n)) << nn_own << " of " << n;
}
