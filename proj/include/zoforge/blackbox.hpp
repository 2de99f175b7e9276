#pragma once

#include <span>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/objective.hpp"

namespace zoforge {

// f(theta) = 1/2 theta^T diag(a) theta - b^T theta. Throws RangeError unless
// every a_i > 0 and a, b have equal length.
Objective<double> quadratic_objective(std::vector<double> a, std::vector<double> b);

// diag(a) theta - b
GradVector<double> quadratic_gradient(std::span<const double> a,
                                      std::span<const double> b,
                                      std::span<const double> theta);

}  // namespace zoforge
