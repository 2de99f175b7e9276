#include "zoforge/coordinate_set.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "zoforge/error.hpp"

namespace zoforge {

CoordinateSet::CoordinateSet(std::vector<std::size_t> indices, std::size_t d)
    : indices_(std::move(indices)), d_(d) {
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    if (indices_[k] >= d_) {
      throw RangeError("coordinate " + std::to_string(indices_[k]) +
                       " out of range [0, " + std::to_string(d_) + ")");
    }
    if (k > 0 && indices_[k] <= indices_[k - 1]) {
      throw RangeError("coordinate indices must be strictly increasing");
    }
  }
}

CoordinateSet CoordinateSet::from_unsorted(std::vector<std::size_t> indices,
                                           std::size_t d) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  return CoordinateSet(std::move(indices), d);
}

CoordinateSet CoordinateSet::full(std::size_t d) {
  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return CoordinateSet(std::move(all), d);
}

bool CoordinateSet::contains(std::size_t i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

}  // namespace zoforge
