#include "zoforge/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace zoforge {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

template <class T>
std::uint64_t digest(std::span<const T> values) {
  return fnv1a(values.data(), values.size_bytes());
}

struct Layout {
  std::vector<Shape> shapes;  // z_0 .. z_L
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> counts;
};

Layout layout_of(const ModelSpec& spec) {
  Layout lay;
  lay.shapes = infer_shapes(spec);
  std::size_t offset = 0;
  for (const auto& layer : spec.layers) {
    const std::size_t n = layer_param_count(layer);
    lay.offsets.push_back(offset);
    lay.counts.push_back(n);
    offset += n;
  }
  return lay;
}

template <class T>
void check_inputs(const ModelSpec& spec, const Layout& lay,
                  std::size_t theta_size, const Batch<T>& batch) {
  std::size_t d = 0;
  for (auto c : lay.counts) d += c;
  if (theta_size != d) {
    throw ShapeError("parameter vector has " + std::to_string(theta_size) +
                     " entries, model needs " + std::to_string(d));
  }
  const Shape& in = batch.inputs.shape();
  if (in.size() != spec.input.size() + 1 ||
      !std::equal(spec.input.begin(), spec.input.end(), in.begin() + 1)) {
    throw ShapeError("batch input " + shape_to_string(in) +
                     " does not match model input " +
                     shape_to_string(spec.input));
  }
  if (batch.labels.empty() || in[0] != batch.labels.size()) {
    throw ShapeError("batch needs N >= 1 inputs with one label each");
  }
  const std::size_t classes = lay.shapes.back()[0];
  for (auto y : batch.labels) {
    if (y >= classes) {
      throw ShapeError("label " + std::to_string(y) + " >= class count " +
                       std::to_string(classes));
    }
  }
}

template <class T>
void require_finite(std::span<const T> values, std::size_t layer) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite activation after layer " +
                         std::to_string(layer));
    }
  }
}

template <class T>
void dense_forward(const Dense& l, std::size_t n, std::span<const T> p,
                   std::span<const T> in, std::span<T> out) {
  const T* w = p.data();
  const T* b = l.bias ? p.data() + l.in * l.out : nullptr;
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * l.in;
    T* y = out.data() + s * l.out;
    for (std::size_t o = 0; o < l.out; ++o) {
      const T* wr = w + o * l.in;
      T acc{0};
      for (std::size_t i = 0; i < l.in; ++i) acc += wr[i] * x[i];
      y[o] = b ? acc + b[o] : acc;
    }
  }
}

template <class T>
void conv_forward(const Conv2d& l, const Shape& in_shape, std::size_t n,
                  std::span<const T> p, std::span<const T> in,
                  std::span<T> out) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t K = l.kernel, S = l.stride;
  const auto pad = static_cast<std::ptrdiff_t>(l.pad);
  const std::size_t OH = (H + 2 * l.pad - K) / S + 1;
  const std::size_t OW = (W + 2 * l.pad - K) / S + 1;
  const T* w = p.data();
  const T* b = l.bias ? p.data() + l.out_ch * C * K * K : nullptr;

  // Valid output range along one axis for kernel offset k.
  auto range = [&](std::size_t k, std::size_t extent, std::size_t out_extent) {
    std::ptrdiff_t lo = 0;
    const auto shift = static_cast<std::ptrdiff_t>(k) - pad;
    while (lo < static_cast<std::ptrdiff_t>(out_extent) &&
           lo * static_cast<std::ptrdiff_t>(S) + shift < 0) {
      ++lo;
    }
    std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(out_extent);
    while (hi > lo && (hi - 1) * static_cast<std::ptrdiff_t>(S) + shift >=
                          static_cast<std::ptrdiff_t>(extent)) {
      --hi;
    }
    return std::pair{lo, hi};
  };

  for (std::size_t s = 0; s < n; ++s) {
    const T* x = in.data() + s * C * H * W;
    for (std::size_t o = 0; o < l.out_ch; ++o) {
      T* plane = out.data() + (s * l.out_ch + o) * OH * OW;
      std::fill(plane, plane + OH * OW, b ? b[o] : T{0});
      for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x + c * H * W;
        const T* wk = w + (o * C + c) * K * K;
        for (std::size_t kh = 0; kh < K; ++kh) {
          const auto [oh_lo, oh_hi] = range(kh, H, OH);
          for (std::size_t kw = 0; kw < K; ++kw) {
            const auto [ow_lo, ow_hi] = range(kw, W, OW);
            const T wv = wk[kh * K + kw];
            const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(kh) - pad;
            const std::ptrdiff_t dw = static_cast<std::ptrdiff_t>(kw) - pad;
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const T* xr = xc + (oh * static_cast<std::ptrdiff_t>(S) + dh) *
                                     static_cast<std::ptrdiff_t>(W);
              T* yr = plane + oh * static_cast<std::ptrdiff_t>(OW);
              if (S == 1) {
                const T* xs = xr + dw;
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) {
                  yr[ow] += wv * xs[ow];
                }
              } else {
                for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) {
                  yr[ow] += wv * xr[ow * static_cast<std::ptrdiff_t>(S) + dw];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void batchnorm_forward(const BatchNorm& l, const Shape& in_shape,
                       std::size_t n, std::span<const T> p,
                       std::span<const T> in, std::span<T> out) {
  const std::size_t ch = l.ch;
  const std::size_t inner = in_shape.size() == 3 ? in_shape[1] * in_shape[2] : 1;
  const double count = static_cast<double>(n * inner);
  for (std::size_t c = 0; c < ch; ++c) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = in.data() + (s * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) sum += x[i];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = in.data() + (s * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double dv = x[i] - mean;
        sq += dv * dv;
      }
    }
    const double inv_std = 1.0 / std::sqrt(sq / count + l.eps);
    const double gamma = p[c];
    const double beta = p[ch + c];
    for (std::size_t s = 0; s < n; ++s) {
      const T* x = in.data() + (s * ch + c) * inner;
      T* y = out.data() + (s * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        y[i] = static_cast<T>(gamma * ((x[i] - mean) * inv_std) + beta);
      }
    }
  }
}

template <class T, bool kMax>
void pool_forward(std::size_t k, const Shape& in_shape, std::size_t n,
                  std::span<const T> in, std::span<T> out) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t OH = H / k, OW = W / k;
  const T inv = T{1} / static_cast<T>(k * k);
  for (std::size_t plane = 0; plane < n * C; ++plane) {
    const T* x = in.data() + plane * H * W;
    T* y = out.data() + plane * OH * OW;
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        T acc = kMax ? -std::numeric_limits<T>::infinity() : T{0};
        for (std::size_t i = 0; i < k; ++i) {
          const T* xr = x + (oh * k + i) * W + ow * k;
          for (std::size_t j = 0; j < k; ++j) {
            if constexpr (kMax) {
              acc = std::max(acc, xr[j]);
            } else {
              acc += xr[j];
            }
          }
        }
        y[oh * OW + ow] = kMax ? acc : acc * inv;
      }
    }
  }
}

}  // namespace

namespace detail {

template <class T>
void apply_layer(const Layer& layer, const Shape& in_shape, std::size_t n,
                 std::span<const T> params, std::span<const T> in,
                 std::span<T> out) {
  if (const auto* l = std::get_if<Dense>(&layer)) {
    dense_forward(*l, n, params, in, out);
  } else if (const auto* l = std::get_if<Conv2d>(&layer)) {
    conv_forward(*l, in_shape, n, params, in, out);
  } else if (const auto* l = std::get_if<BatchNorm>(&layer)) {
    batchnorm_forward(*l, in_shape, n, params, in, out);
  } else if (std::holds_alternative<ReLU>(layer)) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      out[i] = in[i] > T{0} ? in[i] : T{0};
    }
  } else if (const auto* l = std::get_if<MaxPool>(&layer)) {
    pool_forward<T, true>(l->k, in_shape, n, in, out);
  } else if (const auto* l = std::get_if<AvgPool>(&layer)) {
    pool_forward<T, false>(l->k, in_shape, n, in, out);
  } else {
    std::copy(in.begin(), in.end(), out.begin());
  }
}

std::pair<std::size_t, std::size_t> layer_param_range(const ModelSpec& spec,
                                                      std::size_t layer) {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layer; ++i) {
    offset += layer_param_count(spec.layers.at(i));
  }
  return {offset, layer_param_count(spec.layers.at(layer))};
}

}  // namespace detail

template <class T>
double softmax_cross_entropy(const Tensor<T>& logits,
                             std::span<const std::size_t> labels) {
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.data().data() + s * c;
    double m = z[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, static_cast<double>(z[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - m);
    total += m + std::log(sum) - static_cast<double>(z[labels[s]]);
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

namespace {

// Runs layers [from, L) starting from `start`; keeps every activation when
// `keep` is non-null, otherwise ping-pongs between two buffers.
template <class T>
Tensor<T> run_layers(const ModelSpec& spec, const Layout& lay,
                     std::span<const T> theta, std::size_t n,
                     const Tensor<T>& start, std::size_t from,
                     std::vector<Tensor<T>>* keep) {
  const std::size_t L = spec.layers.size();
  Tensor<T> current;
  const Tensor<T>* src = &start;
  for (std::size_t i = from; i < L; ++i) {
    Shape out_shape{n};
    out_shape.insert(out_shape.end(), lay.shapes[i + 1].begin(),
                     lay.shapes[i + 1].end());
    Tensor<T> next(std::move(out_shape));
    detail::apply_layer<T>(spec.layers[i], lay.shapes[i], n,
                           theta.subspan(lay.offsets[i], lay.counts[i]),
                           src->data(), next.data());
    require_finite<T>(next.data(), i);
    if (keep) {
      keep->push_back(std::move(next));
      src = &keep->back();
    } else {
      current = std::move(next);
      src = &current;
    }
  }
  if (keep) return keep->empty() ? start : keep->back();
  return from == L ? start : current;
}

template <class T>
std::uint64_t batch_digest(const Batch<T>& batch) {
  std::uint64_t h = digest<T>(batch.inputs.data());
  return fnv1a(batch.labels.data(), batch.labels.size() * sizeof(std::size_t), h);
}

}  // namespace

template <class T>
ForwardResult<T> forward(const ModelSpec& spec, const ParamVector<T>& theta,
                         const Batch<T>& batch) {
  const Layout lay = layout_of(spec);
  check_inputs(spec, lay, theta.size(), batch);
  const std::size_t n = batch.size();
  require_finite<T>(batch.inputs.data(), 0);

  std::vector<Tensor<T>> acts;
  acts.reserve(spec.layers.size() + 1);
  acts.push_back(batch.inputs);
  std::vector<Tensor<T>> rest;
  rest.reserve(spec.layers.size());
  run_layers<T>(spec, lay, theta.values(), n, acts.front(), 0, &rest);
  for (auto& t : rest) acts.push_back(std::move(t));

  std::vector<std::uint64_t> digests;
  digests.reserve(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    digests.push_back(
        digest<T>(theta.values().subspan(lay.offsets[i], lay.counts[i])));
  }

  ForwardResult<T> result;
  result.logits = acts.back();
  result.loss = softmax_cross_entropy(result.logits, batch.labels);
  result.cache = FeatureCache<T>(std::move(acts), std::move(digests),
                                 batch_digest(batch));
  return result;
}

template <class T>
double forward_loss(const ModelSpec& spec, std::span<const T> theta,
                    const Batch<T>& batch) {
  const Layout lay = layout_of(spec);
  check_inputs(spec, lay, theta.size(), batch);
  const Tensor<T> logits =
      run_layers<T>(spec, lay, theta, batch.size(), batch.inputs, 0, nullptr);
  return softmax_cross_entropy(logits, batch.labels);
}

template <class T>
double forward_from(const ModelSpec& spec, std::span<const T> theta,
                    const Batch<T>& batch, const FeatureCache<T>& cache,
                    std::size_t l, ReuseCheck check) {
  const Layout lay = layout_of(spec);
  check_inputs(spec, lay, theta.size(), batch);
  if (l > spec.layers.size() || cache.depth() != spec.layers.size()) {
    throw StaleCacheError("reuse depth " + std::to_string(l) +
                          " invalid for a cache of depth " +
                          std::to_string(cache.depth()));
  }
#ifdef NDEBUG
  const bool verify = check == ReuseCheck::kVerify;
#else
  const bool verify = check != ReuseCheck::kTrust;
#endif
  if (verify) {
    if (cache.batch_digest() != batch_digest(batch)) {
      throw StaleCacheError("cache was built from a different batch");
    }
    for (std::size_t i = 0; i < l; ++i) {
      const auto seg = theta.subspan(lay.offsets[i], lay.counts[i]);
      if (digest<T>(seg) != cache.layer_digest(i)) {
        throw StaleCacheError("parameters of layer " + std::to_string(i) +
                              " changed since the cache was built");
      }
    }
  }
  const Tensor<T> logits = run_layers<T>(spec, lay, theta, batch.size(),
                                         cache.activation(l), l, nullptr);
  return softmax_cross_entropy(logits, batch.labels);
}

template <class T>
Tensor<T> predict(const ModelSpec& spec, std::span<const T> theta,
                  const Tensor<T>& inputs) {
  const Layout lay = layout_of(spec);
  Batch<T> probe{inputs, std::vector<std::size_t>(inputs.dim(0), 0)};
  check_inputs(spec, lay, theta.size(), probe);
  return run_layers<T>(spec, lay, theta, inputs.dim(0), inputs, 0, nullptr);
}

#define ZOFORGE_INSTANTIATE(T)                                                 \
  template ForwardResult<T> forward<T>(const ModelSpec&, const ParamVector<T>&, \
                                       const Batch<T>&);                      \
  template double forward_loss<T>(const ModelSpec&, std::span<const T>,        \
                                  const Batch<T>&);                           \
  template double forward_from<T>(const ModelSpec&, std::span<const T>,        \
                                  const Batch<T>&, const FeatureCache<T>&,     \
                                  std::size_t, ReuseCheck);                   \
  template Tensor<T> predict<T>(const ModelSpec&, std::span<const T>,          \
                                const Tensor<T>&);                            \
  template double softmax_cross_entropy<T>(const Tensor<T>&,                   \
                                           std::span<const std::size_t>);     \
  template void detail::apply_layer<T>(const Layer&, const Shape&,             \
                                       std::size_t, std::span<const T>,        \
                                       std::span<const T>, std::span<T>);

ZOFORGE_INSTANTIATE(float)
ZOFORGE_INSTANTIATE(double)

#undef ZOFORGE_INSTANTIATE

}  // namespace zoforge
