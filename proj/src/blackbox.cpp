#include "zoforge/blackbox.hpp"

#include <string>

namespace zoforge {

Objective<double> quadratic_objective(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) {
    throw RangeError("quadratic objective: diag has " + std::to_string(a.size()) +
                     " entries, b has " + std::to_string(b.size()));
  }
  for (double v : a) {
    if (!(v > 0.0)) throw RangeError("quadratic objective: diagonal entries must be > 0");
  }
  return Objective<double>([a = std::move(a), b = std::move(b)](std::span<const double> t) {
    if (t.size() != a.size()) throw ShapeError("quadratic objective: wrong dimension");
    double v = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) v += 0.5 * a[i] * t[i] * t[i] - b[i] * t[i];
    return v;
  });
}

GradVector<double> quadratic_gradient(std::span<const double> a,
                                      std::span<const double> b,
                                      std::span<const double> theta) {
  GradVector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = a[i] * theta[i] - b[i];
  return g;
}

}  // namespace zoforge
