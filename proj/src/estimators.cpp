#include "zoforge/estimators.hpp"

#include <chrono>
#include <memory>
#include <random>
#include <string>

namespace zoforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_mu(double mu) {
  if (!(mu > 0.0)) throw RangeError("smoothing parameter mu must be > 0");
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <class T>
DirectionSource<T> gaussian_directions(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](std::span<T> u) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : u) v = static_cast<T>(normal(*rng));
  };
}

template <class T>
GradEstimate<T> rge(const Objective<T>& f, std::span<const T> theta,
                    std::size_t q, double mu, std::uint64_t seed) {
  return rge<T>(f, theta, q, mu, gaussian_directions<T>(seed));
}

template <class T>
GradEstimate<T> rge(const Objective<T>& f, std::span<const T> theta,
                    std::size_t q, double mu, const DirectionSource<T>& dirs) {
  if (q == 0) throw RangeError("direction count q must be >= 1");
  check_mu(mu);
  const std::size_t d = theta.size();
  GradEstimate<T> est;
  std::vector<T> u(d), scratch(d);
  std::vector<double> acc(d, 0.0);

  auto t = Clock::now();
  est.base_value = f(theta);
  est.timings.mi += seconds_since(t);

  const T step = static_cast<T>(mu);
  for (std::size_t k = 0; k < q; ++k) {
    t = Clock::now();
    dirs(u);
    est.timings.dv += seconds_since(t);

    t = Clock::now();
    for (std::size_t j = 0; j < d; ++j) scratch[j] = theta[j] + step * u[j];
    est.timings.wp += seconds_since(t);

    t = Clock::now();
    const double value = f(scratch);
    est.timings.mi += seconds_since(t);

    t = Clock::now();
    const double slope = (value - est.base_value) / mu;
    for (std::size_t j = 0; j < d; ++j) acc[j] += slope * u[j];
    est.timings.ao += seconds_since(t);
  }

  t = Clock::now();
  est.grad.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    est.grad[j] = static_cast<T>(acc[j] / static_cast<double>(q));
  }
  est.timings.ao += seconds_since(t);
  est.queries = q + 1;
  return est;
}

template <class T>
GradEstimate<T> cge(const Objective<T>& f, std::span<const T> theta,
                    double mu) {
  return sparse_cge<T>(f, theta, mu, CoordinateSet::full(theta.size()));
}

template <class T>
GradEstimate<T> sparse_cge(const Objective<T>& f, std::span<const T> theta,
                           double mu, const CoordinateSet& S) {
  check_mu(mu);
  const std::size_t d = theta.size();
  if (!S.empty() && S.indices().back() >= d) {
    throw RangeError("coordinate " + std::to_string(S.indices().back()) +
                     " out of range [0, " + std::to_string(d) + ")");
  }
  GradEstimate<T> est;
  est.grad.assign(d, T{0});
  std::vector<T> scratch(theta.begin(), theta.end());

  auto t = Clock::now();
  est.base_value = f(theta);
  est.timings.mi += seconds_since(t);

  for (std::size_t i : S.indices()) {
    t = Clock::now();
    scratch[i] = detail::perturb(theta[i], mu);
    est.timings.wp += seconds_since(t);

    t = Clock::now();
    const double value = f(scratch);
    est.timings.mi += seconds_since(t);

    t = Clock::now();
    est.grad[i] = detail::forward_slope<T>(value, est.base_value, mu);
    scratch[i] = theta[i];
    est.timings.ao += seconds_since(t);
  }
  est.queries = S.size() + 1;
  return est;
}

#define ZOFORGE_INSTANTIATE(T)                                               \
  template DirectionSource<T> gaussian_directions<T>(std::uint64_t);         \
  template GradEstimate<T> rge<T>(const Objective<T>&, std::span<const T>,   \
                                  std::size_t, double, std::uint64_t);       \
  template GradEstimate<T> rge<T>(const Objective<T>&, std::span<const T>,   \
                                  std::size_t, double,                       \
                                  const DirectionSource<T>&);                \
  template GradEstimate<T> cge<T>(const Objective<T>&, std::span<const T>,   \
                                  double);                                   \
  template GradEstimate<T> sparse_cge<T>(const Objective<T>&,                \
                                         std::span<const T>, double,         \
                                         const CoordinateSet&);

ZOFORGE_INSTANTIATE(float)
ZOFORGE_INSTANTIATE(double)

#undef ZOFORGE_INSTANTIATE

}  // namespace zoforge
