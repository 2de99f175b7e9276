#include "zoforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace zoforge {

template <class T>
Batch<T> Dataset<T>::gather(std::span<const std::size_t> rows) const {
  const std::size_t width = shape_numel(sample_shape);
  Shape shape{rows.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  std::vector<T> x;
  x.reserve(rows.size() * width);
  std::vector<std::size_t> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw RangeError("dataset row out of range");
    x.insert(x.end(), inputs.begin() + static_cast<std::ptrdiff_t>(r * width),
             inputs.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    y.push_back(labels[r]);
  }
  return {Tensor<T>(std::move(shape), std::move(x)), std::move(y)};
}

template <class T>
Batch<T> Dataset<T>::all() const {
  std::vector<std::size_t> rows(size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return gather(rows);
}

template struct Dataset<float>;
template struct Dataset<double>;

Dataset<double> gaussian_blobs(std::size_t n, std::size_t dim,
                               std::size_t classes, double separation,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centers(classes * dim);
  for (auto& c : centers) c = separation * normal(rng);
  Dataset<double> d{{dim}, {}, {}, classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    for (std::size_t k = 0; k < dim; ++k) {
      d.inputs.push_back(centers[y * dim + k] + normal(rng));
    }
    d.labels.push_back(y);
  }
  return d;
}

Dataset<double> two_moons(std::size_t n, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  Dataset<double> d{{2}, {}, {}, 2};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    const double t = angle(rng);
    double x0 = std::cos(t), x1 = std::sin(t);
    if (y == 1) {
      x0 = 1.0 - x0;
      x1 = 0.5 - x1;
    }
    d.inputs.push_back(x0 + normal(rng));
    d.inputs.push_back(x1 + normal(rng));
    d.labels.push_back(y);
  }
  return d;
}

Dataset<double> tiny_images(std::size_t n, std::size_t size, std::size_t classes,
                            double noise, std::uint64_t seed) {
  if (size < 3 || classes < 2 || classes > 4) {
    throw RangeError("tiny_images needs size >= 3 and 2..4 classes");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise);
  std::uniform_int_distribution<std::size_t> pos(0, size - 1);
  Dataset<double> d{{1, size, size}, {}, {}, classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % classes;
    const std::size_t at = pos(rng);
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        bool on = false;
        switch (y) {
          case 0: on = r == at; break;
          case 1: on = c == at; break;
          case 2: on = (r + size - c) % size == at; break;
          default: on = (r + c) % size == at; break;
        }
        d.inputs.push_back((on ? 1.0 : 0.0) + normal(rng));
      }
    }
    d.labels.push_back(y);
  }
  return d;
}

Dataset<double> load_raw_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image file '" + path + "'");
  auto read_u32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
      throw ConfigError("truncated header in '" + path + "'");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };
  const std::size_t count = read_u32(), h = read_u32(), w = read_u32(), c = read_u32();
  if (count == 0 || h == 0 || w == 0 || c == 0) {
    throw ConfigError("empty dimensions in '" + path + "'");
  }
  std::vector<unsigned char> pixels(count * h * w * c), labels(count);
  if (!in.read(reinterpret_cast<char*>(pixels.data()),
               static_cast<std::streamsize>(pixels.size())) ||
      !in.read(reinterpret_cast<char*>(labels.data()),
               static_cast<std::streamsize>(labels.size()))) {
    throw ConfigError("truncated image data in '" + path + "'");
  }
  Dataset<double> d{{c, h, w}, std::vector<double>(pixels.size()), {}, 0};
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          d.inputs[((s * c + ch) * h + y) * w + x] =
              pixels[((s * h + y) * w + x) * c + ch] / 255.0;
        }
    d.labels.push_back(labels[s]);
    d.classes = std::max<std::size_t>(d.classes, labels[s] + 1u);
  }
  return d;
}

void standardize(Dataset<double>& fit, Dataset<double>& other) {
  const std::size_t width = shape_numel(fit.sample_shape);
  for (std::size_t k = 0; k < width; ++k) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < fit.size(); ++s) sum += fit.inputs[s * width + k];
    const double m = sum / static_cast<double>(fit.size());
    for (std::size_t s = 0; s < fit.size(); ++s) {
      const double v = fit.inputs[s * width + k] - m;
      sq += v * v;
    }
    const double sd = std::sqrt(sq / static_cast<double>(fit.size()));
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (auto* d : {&fit, &other}) {
      for (std::size_t s = 0; s < d->size(); ++s) {
        auto& v = d->inputs[s * width + k];
        v = (v - m) * inv;
      }
    }
  }
}

Split<double> split(const Dataset<double>& data, double train_fraction,
                    std::uint64_t seed) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::round(train_fraction * static_cast<double>(data.size())));
  const std::size_t width = shape_numel(data.sample_shape);
  Split<double> out{{data.sample_shape, {}, {}, data.classes},
                    {data.sample_shape, {}, {}, data.classes}};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& dst = k < n_train ? out.train : out.test;
    const std::size_t r = rows[k];
    dst.inputs.insert(dst.inputs.end(),
                      data.inputs.begin() + static_cast<std::ptrdiff_t>(r * width),
                      data.inputs.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
    dst.labels.push_back(data.labels[r]);
  }
  return out;
}

}  // namespace zoforge
