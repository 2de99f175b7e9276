#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "zoforge/fo_oracle.hpp"
#include "zoforge/pruning.hpp"
#include "zoforge/stats.hpp"

namespace zoforge {
namespace {

using testing::random_batch;
using testing::rel_err;

std::vector<std::size_t> idx(const CoordinateSet& s) { return s.indices(); }

Objective<double> quadratic_2_4() {
  return Objective<double>([](std::span<const double> t) {
    return 0.5 * (2.0 * t[0] * t[0] + 4.0 * t[1] * t[1]);
  });
}

TEST(GraspFo, ZeroThetaGivesZeroScores) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = ParamVector<double>::zeros(spec);
  const auto batch = random_batch<double>(spec, 4, 1);
  for (double s : grasp_scores_fo(spec, theta.values(), batch).values) {
    EXPECT_EQ(s, 0.0);
  }
}

TEST(GraspFo, TinyMlpMatchesDoubleStencil) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = init_params<double>(spec, 31);
  const auto batch = random_batch<double>(spec, 6, 32);
  const auto scores = grasp_scores_fo(spec, theta.values(), batch);

  const auto f = make_loss_objective(spec, batch);
  const auto g = central_fd_grad(f, theta.values(), 1e-5);
  const double eps = 1e-3;
  std::vector<double> up(theta.size()), down(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    up[i] = theta[i] + eps * g[i];
    down[i] = theta[i] - eps * g[i];
  }
  const auto gu = central_fd_grad(f, up, 1e-5);
  const auto gd = central_fd_grad(f, down, 1e-5);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double ref = -theta[i] * (gu[i] - gd[i]) / (2 * eps);
    EXPECT_LE(rel_err(scores.values[i], ref), 1e-3) << i;
  }
}

TEST(ZoGrasp, CgeModeOnQuadraticHasKnownBias) {
  // Inner CGE gives A theta + (mu/2) diag(A); the outer difference is exact
  // on a quadratic, so the scores are -theta * A (g + (mu/2) diag(A)).
  const auto f = quadratic_2_4();
  const std::vector<double> theta{1.0, 1.0};
  for (double mu : {1.0 / 128, 1.0 / 1024}) {
    const auto s = zo_grasp_scores<double>(f, theta, 0, mu, 1, GraspEstimator::kCge);
    EXPECT_NEAR(s.values[0], -(4.0 + 2.0 * mu), 1e-9) << mu;
    EXPECT_NEAR(s.values[1], -(16.0 + 8.0 * mu), 1e-9) << mu;
    EXPECT_EQ(s.queries, zo_grasp_query_cost(2, 0, GraspEstimator::kCge));
    EXPECT_EQ(s.queries, 9u);
  }
  const auto tiny = zo_grasp_scores<double>(f, theta, 0, 1e-5, 1, GraspEstimator::kCge);
  EXPECT_NEAR(tiny.values[0], -4.0, 1e-4);
  EXPECT_NEAR(tiny.values[1], -16.0, 1e-4);
}

TEST(ZoGrasp, ZeroThetaGivesZeroScores) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = ParamVector<double>::zeros(spec);
  const auto batch = random_batch<double>(spec, 4, 1);
  const auto f = make_loss_objective(spec, batch);
  const auto s = zo_grasp_scores<double>(f, theta.values(), 16, kDefaultMu, 3);
  for (double v : s.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(s.queries, 3u * 17u);
  EXPECT_EQ(f.queries(), 3u * 17u);
}

TEST(ZoGrasp, DeterministicPerSeed) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = init_params<float>(spec, 2);
  const auto batch = random_batch<float>(spec, 4, 1);
  const auto f = make_loss_objective(spec, batch);
  const auto a = zo_grasp_scores<float>(f, theta.values(), 8, kDefaultMu, 5);
  const auto b = zo_grasp_scores<float>(f, theta.values(), 8, kDefaultMu, 5);
  const auto c = zo_grasp_scores<float>(f, theta.values(), 8, kDefaultMu, 6);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(ZoGrasp, CgeModeConvergesAtFirstOrder) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = init_params<double>(spec, 41);
  const auto batch = random_batch<double>(spec, 8, 42);
  const auto fo = grasp_scores_fo(spec, theta.values(), batch, 1e-7);
  const auto f = make_loss_objective(spec, batch);
  auto max_err = [&](double mu) {
    const auto s = zo_grasp_scores<double>(f, theta.values(), 0, mu, 1,
                                           GraspEstimator::kCge);
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      worst = std::max(worst, rel_err(s.values[i], fo.values[i]));
    }
    return worst;
  };
  const double e1 = max_err(2e-3);
  const double e2 = max_err(1e-3);
  EXPECT_LT(e2, e1);
  EXPECT_NEAR(e2 / e1, 0.5, 0.15);
}

TEST(PruneMask, KeepsLowestScores) {
  const std::vector<double> s{5, 1, 3, 2};
  EXPECT_EQ(idx(prune_mask_global(s, 0.5)), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(idx(prune_mask_global(s, 0.0)), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(idx(prune_mask_global(s, 0.75)), (std::vector<std::size_t>{1}));
}

TEST(PruneMask, TiesGoToLowerIndex) {
  const std::vector<double> s{1, 0, 1, 0, 1};
  EXPECT_EQ(idx(prune_mask_global(s, 0.4)), (std::vector<std::size_t>{0, 1, 3}));
}

TEST(PruneMask, RejectsBadRatio) {
  const std::vector<double> s{1, 2};
  EXPECT_THROW(prune_mask_global(s, 1.0), RangeError);
  EXPECT_THROW(prune_mask_global(s, -0.1), RangeError);
  EXPECT_THROW(random_mask(4, 1.2, 1), RangeError);
}

TEST(PruneMask, CardinalityIsRoundedKeepCount) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (std::size_t d : {1u, 7u, 10u, 131u, 1000u}) {
    std::vector<double> s(d);
    for (auto& v : s) v = normal(rng);
    for (double p : {0.0, 0.3, 0.5, 0.9, 0.95}) {
      const auto expect = static_cast<std::size_t>(std::round((1 - p) * d));
      EXPECT_EQ(prune_mask_global(s, p).size(), expect);
      EXPECT_EQ(random_mask(d, p, 9).size(), expect);
      EXPECT_EQ(magnitude_mask<double>(s, p).size(), expect);
    }
  }
}

TEST(Lpr, FromMask) {
  const std::vector<Segment> segs{{0, 10, 0}, {10, 20, 2}};
  const CoordinateSet mask({1, 4, 7, 10, 11, 12, 20, 29}, 30);
  const LprTable lpr = lpr_from_mask(mask, segs);
  ASSERT_EQ(lpr.size(), 2u);
  EXPECT_EQ(lpr[0].layer, 0u);
  EXPECT_DOUBLE_EQ(lpr[0].keep, 0.3);
  EXPECT_EQ(lpr[1].layer, 2u);
  EXPECT_DOUBLE_EQ(lpr[1].keep, 0.25);
  for (const auto& k : lpr_from_mask(CoordinateSet::full(30), segs)) EXPECT_EQ(k.keep, 1.0);
  for (const auto& k : lpr_from_mask(CoordinateSet({}, 30), segs)) EXPECT_EQ(k.keep, 0.0);
}

TEST(Lpr, PreservesGlobalCountUpToRounding) {
  const ModelSpec spec = testing::tiny_cnn(3);
  const auto segs = segment_table(spec);
  const std::size_t d = param_count(spec);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::vector<double> s(d);
  for (auto& v : s) v = normal(rng);
  for (double p : {0.5, 0.9, 0.97}) {
    const auto mask = prune_mask_global(s, p);
    const auto lpr = lpr_from_mask(mask, segs);
    std::size_t total = 0;
    for (std::size_t l = 0; l < segs.size(); ++l) {
      total += layer_keep_count(lpr[l].keep, segs[l].length);
    }
    const auto diff = static_cast<long>(total) - static_cast<long>(mask.size());
    EXPECT_LE(std::abs(diff), static_cast<long>(segs.size()));
    const auto sampled = sample_dynamic_mask(lpr, segs, 1);
    EXPECT_EQ(sampled.size(), total);
  }
}

TEST(DynamicMask, ExactPerLayerCardinality) {
  const std::vector<Segment> segs{{0, 4, 0}, {4, 16, 1}, {20, 3, 3}};
  const LprTable lpr{{0, 0.5}, {1, 1.0}, {3, 0.0}};
  const auto m = sample_dynamic_mask(lpr, segs, 7);
  std::size_t in0 = 0, in1 = 0, in3 = 0;
  for (std::size_t i : m.indices()) {
    if (i < 4) ++in0;
    else if (i < 20) ++in1;
    else ++in3;
  }
  EXPECT_EQ(in0, 2u);
  EXPECT_EQ(in1, 16u);
  EXPECT_EQ(in3, 0u);
  ASSERT_TRUE(m.lpr().has_value());
  EXPECT_EQ(*m.lpr(), lpr);
}

TEST(DynamicMask, FloorOfOneForNonzeroFraction) {
  const std::vector<Segment> segs{{0, 10, 0}};
  EXPECT_EQ(sample_dynamic_mask({{0, 0.01}}, segs, 1).size(), 1u);
  EXPECT_EQ(layer_keep_count(0.25, 10), 3u);  // 2.5 rounds away from zero
  EXPECT_EQ(layer_keep_count(0.0, 10), 0u);
  EXPECT_THROW(layer_keep_count(1.5, 10), RangeError);
}

TEST(DynamicMask, SeedReproducibility) {
  const std::vector<Segment> segs{{0, 32, 0}, {32, 64, 2}};
  const LprTable lpr{{0, 0.5}, {2, 0.25}};
  EXPECT_EQ(sample_dynamic_mask(lpr, segs, 11), sample_dynamic_mask(lpr, segs, 11));
  EXPECT_NE(sample_dynamic_mask(lpr, segs, 11).indices(),
            sample_dynamic_mask(lpr, segs, 12).indices());
}

TEST(BaselineMasks, MagnitudeAndRandom) {
  const std::vector<double> theta{0.1, -5, 2};
  EXPECT_EQ(idx(magnitude_mask<double>(theta, 1.0 / 3)), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(random_mask(9, 0.0, 1), CoordinateSet::full(9));
  EXPECT_EQ(random_mask(100, 0.7, 4), random_mask(100, 0.7, 4));
  EXPECT_NE(random_mask(100, 0.7, 4).indices(), random_mask(100, 0.7, 5).indices());
  const std::vector<double> tied{1, -1, 1, 0};
  EXPECT_EQ(idx(magnitude_mask<double>(tied, 0.5)), (std::vector<std::size_t>{0, 1}));
}

TEST(Serialization, MaskAndLprRoundTrip) {
  const CoordinateSet m({0, 3, 17}, 20);
  std::stringstream ms;
  write_mask(ms, m);
  EXPECT_EQ(ms.str(), "0\n3\n17\n");
  EXPECT_EQ(read_mask(ms, 20), m);

  const LprTable lpr{{0, 0.1}, {3, 1.0 / 3}};
  std::stringstream ls;
  write_lpr(ls, lpr);
  EXPECT_EQ(read_lpr(ls), lpr);

  std::stringstream bad("1\nx\n");
  EXPECT_THROW(read_mask(bad, 5), ConfigError);
  std::stringstream out_of_range("7\n");
  EXPECT_THROW(read_mask(out_of_range, 5), RangeError);
}

TEST(Stats, SpearmanWithTies) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{10, 20, 30, 40, 50};
  const std::vector<double> c{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(a, b), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, c), -1.0);
  const std::vector<double> t{1, 2, 2, 3};
  EXPECT_EQ(average_ranks(t), (std::vector<double>{1, 2.5, 2.5, 4}));
  // Independently computed: Pearson of ranks (1,2.5,2.5,4) vs (1,2,3,4).
  const std::vector<double> u{1, 2, 3, 4};
  EXPECT_NEAR(spearman(t, u), 0.9486832980505138, 1e-12);
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
}

}  // namespace
}  // namespace zoforge
