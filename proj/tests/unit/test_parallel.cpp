#include <gtest/gtest.h>

#include <cstring>
#include <numeric>

#include "helpers.hpp"
#include "zoforge/parallel.hpp"
#include "zoforge/pruning.hpp"

namespace zoforge {
namespace {

using testing::random_batch;

CoordinateSet range_set(std::size_t n) { return CoordinateSet::full(n); }

TEST(Partition, EvenSplit) {
  const auto p = partition(range_set(10), 2);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(p[1], (std::vector<std::size_t>{5, 6, 7, 8, 9}));
}

TEST(Partition, SingleWorker) {
  const CoordinateSet S({2, 5, 9}, 10);
  const auto p = partition(S, 1);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], S.indices());
}

TEST(Partition, MoreWorkersThanCoordinates) {
  const CoordinateSet S({1, 4, 6}, 8);
  const auto p = partition(S, 5);
  ASSERT_EQ(p.size(), 5u);
  std::vector<std::size_t> all;
  for (const auto& b : p) {
    EXPECT_LE(b.size(), 1u);
    all.insert(all.end(), b.begin(), b.end());
  }
  EXPECT_EQ(all, S.indices());
  EXPECT_THROW(partition(S, 0), RangeError);
}

TEST(Partition, BlockSizesDifferByAtMostOne) {
  for (std::size_t n : {0u, 1u, 7u, 23u, 100u}) {
    for (std::size_t w : {1u, 2u, 3u, 4u, 8u}) {
      const auto p = partition(range_set(n), w);
      std::size_t lo = n, hi = 0, total = 0, next = 0;
      for (const auto& b : p) {
        lo = std::min(lo, b.size());
        hi = std::max(hi, b.size());
        total += b.size();
        for (std::size_t i : b) EXPECT_EQ(i, next++);
      }
      EXPECT_EQ(total, n);
      EXPECT_LE(hi - lo, 1u);
    }
  }
}

template <class T>
void expect_bitwise(const std::vector<T>& a, const std::vector<T>& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(T)), 0);
}

TEST(CgeParallel, WorkerCountInvariant) {
  const ModelSpec spec = testing::tiny_cnn(3);
  const auto theta = init_params<float>(spec, 2);
  const auto batch = random_batch<float>(spec, 4, 3);
  const auto S = random_mask(theta.size(), 0.5, 4);
  const auto ref = cge_parallel<float>(spec, theta.values(), batch, S, kDefaultMu, 1);
  for (std::size_t w : {2u, 3u, 4u, 8u}) {
    const auto est = cge_parallel<float>(spec, theta.values(), batch, S, kDefaultMu, w);
    expect_bitwise(est.grad, ref.grad);
    EXPECT_EQ(est.queries, S.size() + 1);
  }
}

TEST(CgeParallel, MatchesSparseCgeExactly) {
  const ModelSpec spec = testing::eight_layer_cnn();
  const auto theta = init_params<double>(spec, 5);
  const auto batch = random_batch<double>(spec, 3, 6);
  const auto f = make_loss_objective(spec, batch);
  const std::vector<CoordinateSet> sets{CoordinateSet::full(theta.size()),
                                        random_mask(theta.size(), 0.7, 1)};
  for (const auto& S : sets) {
    const auto plain = sparse_cge<double>(f, theta.values(), 1e-4, S);
    for (bool reuse : {true, false}) {
      const auto par = cge_parallel<double>(spec, theta.values(), batch, S, 1e-4, 3, reuse);
      expect_bitwise(par.grad, plain.grad);
      EXPECT_EQ(par.base_value, plain.base_value);
    }
  }
}

TEST(CgeParallel, PartitionAdditivity) {
  // Summing estimates over the blocks of any partition gives the full one.
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = init_params<double>(spec, 5);
  const auto batch = random_batch<double>(spec, 5, 6);
  const auto S = CoordinateSet::full(theta.size());
  const auto full = cge_parallel<double>(spec, theta.values(), batch, S, 1e-3, 1);
  std::vector<double> sum(theta.size(), 0.0);
  std::uint64_t queries = 0;
  for (const auto& block : partition(S, 3)) {
    const auto part = cge_parallel<double>(spec, theta.values(), batch,
                                           CoordinateSet(block, theta.size()), 1e-3, 1);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += part.grad[i];
    queries += part.queries - 1;
  }
  expect_bitwise(sum, full.grad);
  EXPECT_EQ(queries + 1, full.queries);
}

TEST(CgeParallel, EmptySetAndErrors) {
  const ModelSpec spec = testing::tiny_mlp();
  const auto theta = init_params<double>(spec, 1);
  const auto batch = random_batch<double>(spec, 2, 1);
  const auto est = cge_parallel<double>(spec, theta.values(), batch,
                                        CoordinateSet({}, theta.size()), 1e-3, 4);
  EXPECT_EQ(est.queries, 1u);
  for (double g : est.grad) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(cge_parallel<double>(spec, theta.values(), batch,
                                    CoordinateSet({theta.size()}, theta.size() + 1), 1e-3, 1)
                   .grad.size(),
               RangeError);
}

TEST(CgeParallel, WorkerExceptionsPropagate) {
  const ModelSpec spec{{1}, {Dense{1, 2}}};
  ParamVector<double> theta(std::vector<double>{1.7e308, 0, 0, 0}, segment_table(spec));
  Batch<double> batch{Tensor<double>({1, 1}, {1.0}), {0}};
  // Perturbing the huge weight overflows to infinity inside a worker.
  EXPECT_THROW(cge_parallel<double>(spec, theta.values(), batch,
                                    CoordinateSet::full(4), 1e308, 2),
               NumericError);
}

TEST(BenchStages, CgeHasNoDirectionStage) {
  const ModelSpec spec = testing::tiny_cnn(2);
  const auto theta = init_params<float>(spec, 1);
  const auto batch = random_batch<float>(spec, 4, 2);
  const auto cge_r = bench_stages<float>(EstimatorKind::kCge, spec, theta.values(), batch,
                                         kDefaultMu, CoordinateSet::full(theta.size()));
  EXPECT_EQ(cge_r.stages.dv, 0.0);
  EXPECT_EQ(cge_r.queries, theta.size() + 1);
  const auto rge_r = bench_stages<float>(EstimatorKind::kRge, spec, theta.values(), batch,
                                         kDefaultMu, std::size_t{16});
  EXPECT_GT(rge_r.stages.dv, 0.0);
  EXPECT_EQ(rge_r.queries, 17u);
  EXPECT_THROW(bench_stages<float>(EstimatorKind::kRge, spec, theta.values(), batch,
                                   kDefaultMu, CoordinateSet::full(theta.size())),
               RangeError);
}

}  // namespace
}  // namespace zoforge
