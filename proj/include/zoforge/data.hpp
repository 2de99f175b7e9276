#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zoforge/forward.hpp"

namespace zoforge {

// Samples stored row-major, one per row, with a per-sample shape.
template <class T>
struct Dataset {
  Shape sample_shape;
  std::vector<T> inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  Batch<T> gather(std::span<const std::size_t> rows) const;
  Batch<T> all() const;
};

template <class T>
struct Split {
  Dataset<T> train;
  Dataset<T> test;
};

// `classes` isotropic Gaussian clusters in `dim` dimensions with centers
// drawn from N(0, separation^2).
Dataset<double> gaussian_blobs(std::size_t n, std::size_t dim,
                               std::size_t classes, double separation,
                               std::uint64_t seed);

// Two interleaved half circles with Gaussian noise.
Dataset<double> two_moons(std::size_t n, double noise, std::uint64_t seed);

// Single-channel size x size images. Class 0 holds a bright horizontal bar,
// class 1 a vertical bar (further classes use diagonals), at random offsets
// under Gaussian noise.
Dataset<double> tiny_images(std::size_t n, std::size_t size, std::size_t classes,
                            double noise, std::uint64_t seed);

// Raw binary: uint32 little-endian count, H, W, C, then count*H*W*C bytes
// in HWC order, then count label bytes. Pixels are scaled to [0, 1] and
// stored CHW.
Dataset<double> load_raw_images(const std::string& path);

// Zero-mean, unit-variance features using statistics of `fit`.
void standardize(Dataset<double>& fit, Dataset<double>& other);

// Deterministic shuffle, first train_fraction of rows to train.
Split<double> split(const Dataset<double>& data, double train_fraction,
                    std::uint64_t seed);

template <class To>
Dataset<To> cast_dataset(const Dataset<double>& d) {
  return {d.sample_shape, std::vector<To>(d.inputs.begin(), d.inputs.end()),
          d.labels, d.classes};
}

}  // namespace zoforge
