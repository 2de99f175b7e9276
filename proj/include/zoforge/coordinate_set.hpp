#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace zoforge {

// Kept fraction for one parameterized layer.
struct LayerKeep {
  std::size_t layer = 0;  // index into ModelSpec::layers
  double keep = 1.0;
  bool operator==(const LayerKeep&) const = default;
};

using LprTable = std::vector<LayerKeep>;

// Sorted, duplicate-free coordinate indices into a d-dimensional vector,
// optionally tagged with the layer-wise ratios it was sampled from.
class CoordinateSet {
 public:
  CoordinateSet() = default;

  // Throws RangeError unless indices are strictly increasing and below d.
  CoordinateSet(std::vector<std::size_t> indices, std::size_t d);

  // Sorts and deduplicates before validating.
  static CoordinateSet from_unsorted(std::vector<std::size_t> indices,
                                     std::size_t d);
  static CoordinateSet full(std::size_t d);

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  std::size_t dim() const { return d_; }
  bool contains(std::size_t i) const;

  const std::optional<LprTable>& lpr() const { return lpr_; }
  void set_lpr(LprTable lpr) { lpr_ = std::move(lpr); }

  bool operator==(const CoordinateSet&) const = default;

 private:
  std::vector<std::size_t> indices_;
  std::size_t d_ = 0;
  std::optional<LprTable> lpr_;
};

}  // namespace zoforge
