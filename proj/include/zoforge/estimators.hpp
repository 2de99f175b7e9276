#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "zoforge/coordinate_set.hpp"
#include "zoforge/objective.hpp"

namespace zoforge {

template <class T>
using GradVector = std::vector<T>;

// Wall-clock seconds of the four stages of one gradient estimate:
// direction generation, weight perturbation, model inference and
// gradient aggregation.
struct StageTimings {
  double dv = 0.0;
  double wp = 0.0;
  double mi = 0.0;
  double ao = 0.0;

  double total() const { return dv + wp + mi + ao; }
  StageTimings& operator+=(const StageTimings& o) {
    dv += o.dv;
    wp += o.wp;
    mi += o.mi;
    ao += o.ao;
    return *this;
  }
};

template <class T>
struct GradEstimate {
  GradVector<T> grad;
  std::uint64_t queries = 0;
  StageTimings timings;
  double base_value = 0.0;  // f(theta)
};

// Fills one direction vector. Used to force directions in tests.
template <class T>
using DirectionSource = std::function<void(std::span<T>)>;

inline constexpr double kDefaultMu = 5e-3;

// Independent child seed number `stream` of `seed` (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Standard-Gaussian directions drawn from a generator seeded with `seed`.
template <class T>
DirectionSource<T> gaussian_directions(std::uint64_t seed);

// (1/q) sum_i [(f(theta + mu u_i) - f(theta)) / mu] u_i; q + 1 queries.
template <class T>
GradEstimate<T> rge(const Objective<T>& f, std::span<const T> theta,
                    std::size_t q, double mu, std::uint64_t seed);

template <class T>
GradEstimate<T> rge(const Objective<T>& f, std::span<const T> theta,
                    std::size_t q, double mu, const DirectionSource<T>& dirs);

// Forward difference along every coordinate; d + 1 queries.
template <class T>
GradEstimate<T> cge(const Objective<T>& f, std::span<const T> theta,
                    double mu);

// Forward difference along the coordinates of S, zero elsewhere;
// |S| + 1 queries. Throws RangeError for an index >= d.
template <class T>
GradEstimate<T> sparse_cge(const Objective<T>& f, std::span<const T> theta,
                           double mu, const CoordinateSet& S);

}  // namespace zoforge

namespace zoforge::detail {

// Shared by every CGE path so that all of them produce identical bits.
template <class T>
inline T perturb(T value, double mu) {
  return value + static_cast<T>(mu);
}

template <class T>
inline T forward_slope(double perturbed, double base, double mu) {
  return static_cast<T>((perturbed - base) / mu);
}

}  // namespace zoforge::detail
