#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "zoforge/forward.hpp"
#include "zoforge/model.hpp"

namespace zoforge::testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

template <class T>
Batch<T> random_batch(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Shape shape{n};
  shape.insert(shape.end(), spec.input.begin(), spec.input.end());
  Tensor<T> inputs(shape);
  for (auto& v : inputs.data()) v = static_cast<T>(normal(rng));
  const std::size_t classes = num_classes(spec);
  std::vector<std::size_t> labels(n);
  for (auto& y : labels) y = rng() % classes;
  return {std::move(inputs), std::move(labels)};
}

// conv -> relu -> maxpool -> conv -> relu -> avgpool -> flatten -> dense
inline ModelSpec tiny_cnn(std::size_t width = 3) {
  return {{1, 8, 8},
          {Conv2d{1, width, 3, 1, 1}, ReLU{}, MaxPool{2},
           Conv2d{width, 4, 3, 1, 0}, ReLU{}, AvgPool{2}, Flatten{},
           Dense{4, 3}}};
}

inline ModelSpec tiny_mlp(std::size_t in = 3, std::size_t hidden = 5,
                          std::size_t out = 3) {
  return {{in}, {Dense{in, hidden}, ReLU{}, Dense{hidden, hidden}, ReLU{},
                 Dense{hidden, out}}};
}

// Eight layers including batch-norm, for reuse sweeps.
inline ModelSpec eight_layer_cnn() {
  return {{2, 6, 6},
          {Conv2d{2, 3, 3, 1, 1}, BatchNorm{3}, ReLU{}, MaxPool{2},
           Conv2d{3, 4, 2, 1, 0}, ReLU{}, Flatten{}, Dense{16, 3}}};
}

}  // namespace zoforge::testing
