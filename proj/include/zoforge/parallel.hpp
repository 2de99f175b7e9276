#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "zoforge/coordinate_set.hpp"
#include "zoforge/estimators.hpp"
#include "zoforge/forward.hpp"

namespace zoforge {

// Per-worker coordinate lists: contiguous blocks of the sorted active set.
using WorkPartition = std::vector<std::vector<std::size_t>>;

// Splits S into W contiguous blocks whose sizes differ by at most one
// (earlier blocks take the remainder). Throws RangeError for W == 0.
WorkPartition partition(const CoordinateSet& S, std::size_t W);

// Sparse CGE of the batch loss across W threads. One shared base forward
// builds the feature cache; each coordinate in layer k then re-evaluates
// layers k..L-1 only (all layers when feature_reuse is false). Workers
// perturb a private copy of theta and write their own output slots, so the
// result does not depend on W. Timings are summed over workers.
template <class T>
GradEstimate<T> cge_parallel(const ModelSpec& spec, std::span<const T> theta,
                             const Batch<T>& batch, const CoordinateSet& S,
                             double mu, std::size_t W, bool feature_reuse = true);

// Sparse CGE of any thread-safe objective under the same fork-join
// contract. Bit-identical to sparse_cge for every W.
template <class T>
GradEstimate<T> sparse_cge_parallel(const Objective<T>& f, std::span<const T> theta,
                                    const CoordinateSet& S, double mu, std::size_t W);

enum class EstimatorKind { kRge, kCge };

struct BenchResult {
  StageTimings stages;
  double wall_seconds = 0.0;
  std::uint64_t queries = 0;
};

// Times one gradient estimate. RGE takes a direction count q and goes
// through the plain objective; CGE takes an active set and runs
// cge_parallel with W workers.
template <class T>
BenchResult bench_stages(EstimatorKind kind, const ModelSpec& spec,
                         std::span<const T> theta, const Batch<T>& batch,
                         double mu, const std::variant<std::size_t, CoordinateSet>& q_or_S,
                         std::size_t W = 1, bool feature_reuse = true,
                         std::uint64_t seed = 0);

}  // namespace zoforge
