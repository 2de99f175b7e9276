#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "zoforge/tensor.hpp"

namespace zoforge {

// Parameter layout per layer (row-major):
//   Dense      W[out][in], then b[out] when bias is set
//   Conv2d     W[out_ch][in_ch][kernel][kernel], then b[out_ch]
//   BatchNorm  gamma[ch], then beta[ch]
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
  bool operator==(const Dense&) const = default;
};

struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool bias = true;
  bool operator==(const Conv2d&) const = default;
};

// Always normalizes with the statistics of the batch being evaluated.
struct BatchNorm {
  std::size_t ch = 0;
  double eps = 1e-5;
  bool operator==(const BatchNorm&) const = default;
};

struct ReLU {
  bool operator==(const ReLU&) const = default;
};

// Non-overlapping k x k windows (stride k, floor on the output size).
struct MaxPool {
  std::size_t k = 2;
  bool operator==(const MaxPool&) const = default;
};

struct AvgPool {
  std::size_t k = 2;
  bool operator==(const AvgPool&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

using Layer =
    std::variant<Dense, Conv2d, BatchNorm, ReLU, MaxPool, AvgPool, Flatten>;

enum class LossKind { SoftmaxCrossEntropy };

struct ModelSpec {
  Shape input;
  std::vector<Layer> layers;
  LossKind loss = LossKind::SoftmaxCrossEntropy;
  bool operator==(const ModelSpec&) const = default;
};

std::string layer_name(const Layer& layer);

// Number of trainable scalars owned by one layer.
std::size_t layer_param_count(const Layer& layer);

// Output shape of one layer for a given per-sample input shape.
Shape layer_output_shape(const Layer& layer, const Shape& in);

// Per-sample shapes z_0 (input) .. z_L. Throws ShapeError when layers do
// not compose or the final activation is not a 1-D logit vector.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

std::size_t param_count(const ModelSpec& spec);

std::size_t num_classes(const ModelSpec& spec);

// Contiguous block of the flat parameter vector owned by one layer.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::size_t layer = 0;  // index into ModelSpec::layers
  bool operator==(const Segment&) const = default;
};

// One segment per parameterized layer, in layer order.
std::vector<Segment> segment_table(const ModelSpec& spec);

// Flat parameter storage theta in R^d plus its per-layer segment table.
template <class T>
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<T> values, std::vector<Segment> segments);

  static ParamVector zeros(const ModelSpec& spec);

  std::size_t size() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  const std::vector<Segment>& segments() const { return segments_; }

  // Layer index owning coordinate i. Throws RangeError for i >= size().
  std::size_t layer_of(std::size_t i) const;

  // Segment of a layer, or nullptr if the layer has no parameters.
  const Segment* segment_for_layer(std::size_t layer) const;

  std::span<const T> layer_values(std::size_t layer) const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<T> values_;
  std::vector<Segment> segments_;
};

// He-normal weights, zero biases, unit gamma / zero beta for batch-norm.
template <class T>
ParamVector<T> init_params(const ModelSpec& spec, std::uint64_t seed);

template <class To, class From>
ParamVector<To> cast_params(const ParamVector<From>& p) {
  std::vector<To> v(p.values().begin(), p.values().end());
  return ParamVector<To>(std::move(v), p.segments());
}

extern template class ParamVector<float>;
extern template class ParamVector<double>;

}  // namespace zoforge
