#pragma once

#include <span>
#include <vector>

namespace zoforge {

// Ranks starting at 1; tied values share the average of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of the average ranks. Returns 0 when either input is
// constant.
double spearman(std::span<const double> a, std::span<const double> b);

double median(std::vector<double> values);
double mean(std::span<const double> values);

}  // namespace zoforge
