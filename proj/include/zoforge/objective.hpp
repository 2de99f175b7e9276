#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "zoforge/forward.hpp"

namespace zoforge {

// A black-box scalar function over a fixed context plus a query counter.
// Every call to operator() is one query. Safe to call from several threads
// when the wrapped function is.
template <class T>
class Objective {
 public:
  using Fn = std::function<double(std::span<const T>)>;

  explicit Objective(Fn fn) : fn_(std::move(fn)) {}
  Objective(const Objective&) = delete;
  Objective& operator=(const Objective&) = delete;

  double operator()(std::span<const T> theta) const {
    queries_.fetch_add(1, std::memory_order_relaxed);
    return fn_(theta);
  }

  std::uint64_t queries() const {
    return queries_.load(std::memory_order_relaxed);
  }
  void reset_queries() { queries_.store(0, std::memory_order_relaxed); }

 private:
  Fn fn_;
  mutable std::atomic<std::uint64_t> queries_{0};
};

// Mean cross-entropy of a model on one fixed batch. The ModelSpec and batch are
// held by reference and must outlive the objective.
template <class T>
Objective<T> make_loss_objective(const ModelSpec& spec, const Batch<T>& batch) {
  return Objective<T>([&spec, &batch](std::span<const T> theta) {
    return forward_loss<T>(spec, theta, batch);
  });
}

}  // namespace zoforge
