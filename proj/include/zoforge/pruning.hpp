#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "zoforge/coordinate_set.hpp"
#include "zoforge/estimators.hpp"
#include "zoforge/forward.hpp"
#include "zoforge/model.hpp"

namespace zoforge {

struct PruneScores {
  std::vector<double> values;  // one per coordinate
  std::uint64_t queries = 0;   // objective evaluations spent
};

inline constexpr std::size_t kDefaultGraspQ = 192;

// -theta * (H g) with g from backprop and H g from a forward difference of
// backprop gradients along g.
PruneScores grasp_scores_fo(const ModelSpec& spec, std::span<const double> theta,
                            const Batch<double>& batch, double hvp_mu = 1e-6);

// Which estimator the zeroth-order scores use internally. kCge replaces every
// RGE call with CGE and exists to isolate finite-difference bias in tests.
enum class GraspEstimator { kRge, kCge };

// -theta * (g1 - g0) / mu where g0 = est(theta), g1 = est(theta + mu * ghat)
// and ghat = est(theta). ghat draws its directions from one seed-derived
// stream; g0 and g1 share a second stream.
template <class T>
PruneScores zo_grasp_scores(const Objective<T>& f, std::span<const T> theta,
                            std::size_t q, double mu, std::uint64_t seed,
                            GraspEstimator estimator = GraspEstimator::kRge);

// Objective evaluations consumed by one zo_grasp_scores call.
std::uint64_t zo_grasp_query_cost(std::size_t d, std::size_t q,
                                  GraspEstimator estimator = GraspEstimator::kRge);

// Round half away from zero, with at least one kept coordinate whenever
// keep > 0 and n > 0.
std::size_t layer_keep_count(double keep, std::size_t n);

// Keeps the round((1 - p) d) lowest scores; ties go to the lower index.
CoordinateSet prune_mask_global(std::span<const double> scores, double p);

// Kept fraction of every parameterized layer.
LprTable lpr_from_mask(const CoordinateSet& mask,
                       const std::vector<Segment>& segments);

// Per layer, layer_keep_count(keep, length) coordinates drawn uniformly
// without replacement. The result carries the LPR table.
CoordinateSet sample_dynamic_mask(const LprTable& lpr,
                                  const std::vector<Segment>& segments,
                                  std::uint64_t seed);

CoordinateSet random_mask(std::size_t d, double p, std::uint64_t seed);

// Keeps the round((1 - p) d) largest |theta|; ties go to the lower index.
template <class T>
CoordinateSet magnitude_mask(std::span<const T> theta, double p);

// One index per line.
void write_mask(std::ostream& out, const CoordinateSet& mask);
CoordinateSet read_mask(std::istream& in, std::size_t d);

// One "layer,keep_fraction" per line.
void write_lpr(std::ostream& out, const LprTable& lpr);
LprTable read_lpr(std::istream& in);

}  // namespace zoforge
