#include "zoforge/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "zoforge/fo_oracle.hpp"

namespace zoforge {

namespace {

void check_ratio(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw RangeError("pruning ratio must lie in [0, 1), got " +
                     std::to_string(p));
  }
}

std::size_t global_keep_count(std::size_t d, double p) {
  check_ratio(p);
  return static_cast<std::size_t>(std::round((1.0 - p) * static_cast<double>(d)));
}

}  // namespace

PruneScores grasp_scores_fo(const ModelSpec& spec, std::span<const double> theta,
                            const Batch<double>& batch, double hvp_mu) {
  const GradFn grad = [&spec, &batch](std::span<const double> t) {
    return backprop_grad<double>(spec, t, batch);
  };
  const GradVector<double> g = grad(theta);
  const GradVector<double> hg = hessian_grad_product(grad, theta, g, hvp_mu);
  PruneScores s;
  s.values.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) s.values[i] = -theta[i] * hg[i];
  return s;
}

template <class T>
PruneScores zo_grasp_scores(const Objective<T>& f, std::span<const T> theta,
                            std::size_t q, double mu, std::uint64_t seed,
                            GraspEstimator estimator) {
  const std::size_t d = theta.size();
  auto estimate = [&](std::span<const T> at, std::uint64_t stream) {
    if (estimator == GraspEstimator::kCge) return cge<T>(f, at, mu);
    return rge<T>(f, at, q, mu, derive_seed(seed, stream));
  };
  const GradEstimate<T> ghat = estimate(theta, 0);
  std::vector<T> shifted(d);
  for (std::size_t i = 0; i < d; ++i) {
    shifted[i] = theta[i] + static_cast<T>(mu) * ghat.grad[i];
  }
  const GradEstimate<T> g1 = estimate(shifted, 1);
  const GradEstimate<T> g0 = estimate(theta, 1);

  PruneScores s;
  s.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double hg = (static_cast<double>(g1.grad[i]) - g0.grad[i]) / mu;
    s.values[i] = -static_cast<double>(theta[i]) * hg;
  }
  s.queries = ghat.queries + g1.queries + g0.queries;
  return s;
}

std::uint64_t zo_grasp_query_cost(std::size_t d, std::size_t q,
                                  GraspEstimator estimator) {
  return 3 * ((estimator == GraspEstimator::kCge ? d : q) + 1);
}

std::size_t layer_keep_count(double keep, std::size_t n) {
  if (!(keep >= 0.0 && keep <= 1.0)) {
    throw RangeError("kept fraction must lie in [0, 1], got " +
                     std::to_string(keep));
  }
  if (keep == 0.0 || n == 0) return 0;
  const auto k = static_cast<std::size_t>(std::round(keep * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

CoordinateSet prune_mask_global(std::span<const double> scores, double p) {
  const std::size_t d = scores.size();
  const std::size_t keep = global_keep_count(d, p);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  order.resize(keep);
  return CoordinateSet::from_unsorted(std::move(order), d);
}

LprTable lpr_from_mask(const CoordinateSet& mask,
                       const std::vector<Segment>& segments) {
  LprTable lpr;
  const auto& idx = mask.indices();
  for (const auto& seg : segments) {
    const auto lo = std::lower_bound(idx.begin(), idx.end(), seg.offset);
    const auto hi = std::lower_bound(lo, idx.end(), seg.offset + seg.length);
    const auto kept = static_cast<double>(hi - lo);
    lpr.push_back({seg.layer, kept / static_cast<double>(seg.length)});
  }
  return lpr;
}

CoordinateSet sample_dynamic_mask(const LprTable& lpr,
                                  const std::vector<Segment>& segments,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  std::size_t d = 0;
  for (const auto& seg : segments) d = std::max(d, seg.offset + seg.length);
  for (const auto& seg : segments) {
    const auto it = std::find_if(lpr.begin(), lpr.end(), [&](const LayerKeep& k) {
      return k.layer == seg.layer;
    });
    if (it == lpr.end()) {
      throw RangeError("no kept fraction for layer " + std::to_string(seg.layer));
    }
    const std::size_t k = layer_keep_count(it->keep, seg.length);
    std::vector<std::size_t> pool(seg.length);
    std::iota(pool.begin(), pool.end(), seg.offset);
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), k, rng);
  }
  CoordinateSet set(std::move(picked), d);
  set.set_lpr(lpr);
  return set;
}

CoordinateSet random_mask(std::size_t d, double p, std::uint64_t seed) {
  const std::size_t keep = global_keep_count(d, p);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(d), picked;
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::sample(pool.begin(), pool.end(), std::back_inserter(picked), keep, rng);
  return CoordinateSet(std::move(picked), d);
}

template <class T>
CoordinateSet magnitude_mask(std::span<const T> theta, double p) {
  const std::size_t d = theta.size();
  const std::size_t keep = global_keep_count(d, p);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(theta[a]) > std::abs(theta[b]);
  });
  order.resize(keep);
  return CoordinateSet::from_unsorted(std::move(order), d);
}

void write_mask(std::ostream& out, const CoordinateSet& mask) {
  for (std::size_t i : mask.indices()) out << i << '\n';
}

CoordinateSet read_mask(std::istream& in, std::size_t d) {
  std::vector<std::size_t> idx;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(line, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != line.size()) throw ConfigError("bad mask line: '" + line + "'");
    idx.push_back(static_cast<std::size_t>(v));
  }
  return CoordinateSet(std::move(idx), d);
}

void write_lpr(std::ostream& out, const LprTable& lpr) {
  char buf[64];
  for (const auto& k : lpr) {
    std::snprintf(buf, sizeof buf, "%.17g", k.keep);
    out << k.layer << ',' << buf << '\n';
  }
}

LprTable read_lpr(std::istream& in) {
  LprTable lpr;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ConfigError("bad LPR line: '" + line + "'");
    }
    try {
      std::size_t p1 = 0, p2 = 0;
      const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
      const auto layer = std::stoull(a, &p1);
      const double keep = std::stod(b, &p2);
      if (p1 != a.size() || p2 != b.size()) throw ConfigError("");
      lpr.push_back({static_cast<std::size_t>(layer), keep});
    } catch (const std::exception&) {
      throw ConfigError("bad LPR line: '" + line + "'");
    }
  }
  return lpr;
}

template PruneScores zo_grasp_scores<float>(const Objective<float>&,
                                            std::span<const float>, std::size_t,
                                            double, std::uint64_t, GraspEstimator);
template PruneScores zo_grasp_scores<double>(const Objective<double>&,
                                             std::span<const double>, std::size_t,
                                             double, std::uint64_t, GraspEstimator);
template CoordinateSet magnitude_mask<float>(std::span<const float>, double);
template CoordinateSet magnitude_mask<double>(std::span<const double>, double);

}  // namespace zoforge
