#include "zoforge/parallel.hpp"

#include <chrono>
#include <exception>
#include <string>
#include <thread>

#include "zoforge/objective.hpp"

namespace zoforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs work(w) for every non-empty block, block 0 on the calling thread,
// and rethrows the first worker exception after all have joined.
template <class Work>
void fork_join(const WorkPartition& parts, Work&& work) {
  std::vector<std::exception_ptr> errors(parts.size());
  auto guarded = [&](std::size_t w) {
    try {
      work(w);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < parts.size(); ++w) {
    if (!parts[w].empty()) threads.emplace_back(guarded, w);
  }
  guarded(0);
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_range(const CoordinateSet& S, std::size_t d) {
  if (!S.empty() && S.indices().back() >= d) {
    throw RangeError("coordinate " + std::to_string(S.indices().back()) +
                     " out of range [0, " + std::to_string(d) + ")");
  }
}

}  // namespace

WorkPartition partition(const CoordinateSet& S, std::size_t W) {
  if (W == 0) throw RangeError("worker count must be >= 1");
  const auto& idx = S.indices();
  const std::size_t base = idx.size() / W;
  const std::size_t extra = idx.size() % W;
  WorkPartition parts(W);
  std::size_t pos = 0;
  for (std::size_t w = 0; w < W; ++w) {
    const std::size_t len = base + (w < extra ? 1 : 0);
    parts[w].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

template <class T>
GradEstimate<T> cge_parallel(const ModelSpec& spec, std::span<const T> theta,
                             const Batch<T>& batch, const CoordinateSet& S,
                             double mu, std::size_t W, bool feature_reuse) {
  if (!(mu > 0.0)) throw RangeError("smoothing parameter mu must be > 0");
  const std::size_t d = theta.size();
  check_range(S, d);
  const WorkPartition parts = partition(S, W);

  GradEstimate<T> est;
  auto t = Clock::now();
  ParamVector<T> snapshot(std::vector<T>(theta.begin(), theta.end()),
                          segment_table(spec));
  const ForwardResult<T> base = forward(spec, snapshot, batch);
  est.base_value = base.loss;
  est.timings.mi += seconds_since(t);
  est.grad.assign(d, T{0});

  std::vector<StageTimings> worker_timings(W);
  fork_join(parts, [&](std::size_t w) {
    StageTimings& tm = worker_timings[w];
    std::vector<T> scratch(theta.begin(), theta.end());
    const std::span<const T> view(scratch);
    for (std::size_t i : parts[w]) {
      auto t0 = Clock::now();
      scratch[i] = detail::perturb(theta[i], mu);
      tm.wp += seconds_since(t0);

      t0 = Clock::now();
      const double value =
          feature_reuse
              ? forward_from<T>(spec, view, batch, base.cache,
                                snapshot.layer_of(i), ReuseCheck::kTrust)
              : forward_loss<T>(spec, view, batch);
      tm.mi += seconds_since(t0);

      t0 = Clock::now();
      est.grad[i] = detail::forward_slope<T>(value, base.loss, mu);
      scratch[i] = theta[i];
      tm.ao += seconds_since(t0);
    }
  });
  for (const auto& tm : worker_timings) est.timings += tm;
  est.queries = S.size() + 1;
  return est;
}

template <class T>
GradEstimate<T> sparse_cge_parallel(const Objective<T>& f, std::span<const T> theta,
                                    const CoordinateSet& S, double mu, std::size_t W) {
  if (!(mu > 0.0)) throw RangeError("smoothing parameter mu must be > 0");
  check_range(S, theta.size());
  const WorkPartition parts = partition(S, W);
  GradEstimate<T> est;
  auto t = Clock::now();
  est.base_value = f(theta);
  est.timings.mi += seconds_since(t);
  est.grad.assign(theta.size(), T{0});
  std::vector<StageTimings> worker_timings(W);
  fork_join(parts, [&](std::size_t w) {
    StageTimings& tm = worker_timings[w];
    std::vector<T> scratch(theta.begin(), theta.end());
    for (std::size_t i : parts[w]) {
      auto t0 = Clock::now();
      scratch[i] = detail::perturb(theta[i], mu);
      tm.wp += seconds_since(t0);
      t0 = Clock::now();
      const double value = f(scratch);
      tm.mi += seconds_since(t0);
      t0 = Clock::now();
      est.grad[i] = detail::forward_slope<T>(value, est.base_value, mu);
      scratch[i] = theta[i];
      tm.ao += seconds_since(t0);
    }
  });
  for (const auto& tm : worker_timings) est.timings += tm;
  est.queries = S.size() + 1;
  return est;
}

template <class T>
BenchResult bench_stages(EstimatorKind kind, const ModelSpec& spec,
                         std::span<const T> theta, const Batch<T>& batch,
                         double mu,
                         const std::variant<std::size_t, CoordinateSet>& q_or_S,
                         std::size_t W, bool feature_reuse, std::uint64_t seed) {
  BenchResult r;
  const auto t = Clock::now();
  GradEstimate<T> est;
  if (kind == EstimatorKind::kRge) {
    const auto* q = std::get_if<std::size_t>(&q_or_S);
    if (!q) throw RangeError("RGE bench needs a direction count");
    const auto f = make_loss_objective(spec, batch);
    est = rge<T>(f, theta, *q, mu, seed);
  } else {
    const auto* S = std::get_if<CoordinateSet>(&q_or_S);
    if (!S) throw RangeError("CGE bench needs an active coordinate set");
    est = cge_parallel<T>(spec, theta, batch, *S, mu, W, feature_reuse);
  }
  r.wall_seconds = seconds_since(t);
  r.stages = est.timings;
  r.queries = est.queries;
  return r;
}

#define ZOFORGE_INSTANTIATE(T)                                                 \
  template GradEstimate<T> sparse_cge_parallel<T>(                             \
      const Objective<T>&, std::span<const T>, const CoordinateSet&, double,   \
      std::size_t);                                                            \
  template GradEstimate<T> cge_parallel<T>(const ModelSpec&, std::span<const T>, \
                                           const Batch<T>&, const CoordinateSet&, \
                                           double, std::size_t, bool);         \
  template BenchResult bench_stages<T>(                                        \
      EstimatorKind, const ModelSpec&, std::span<const T>, const Batch<T>&,    \
      double, const std::variant<std::size_t, CoordinateSet>&, std::size_t,    \
      bool, std::uint64_t);

ZOFORGE_INSTANTIATE(float)
ZOFORGE_INSTANTIATE(double)

#undef ZOFORGE_INSTANTIATE

}  // namespace zoforge
