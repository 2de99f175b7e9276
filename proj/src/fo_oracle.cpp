#include "zoforge/fo_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace zoforge {

namespace {

template <class T>
void dense_backward(const Dense& l, std::size_t n, std::span<const T> p,
                    std::span<const T> x, std::span<const T> dy,
                    std::span<T> dp, std::span<T> dx) {
  const T* w = p.data();
  T* dw = dp.data();
  T* db = l.bias ? dp.data() + l.in * l.out : nullptr;
  for (std::size_t s = 0; s < n; ++s) {
    const T* xs = x.data() + s * l.in;
    const T* g = dy.data() + s * l.out;
    T* gx = dx.empty() ? nullptr : dx.data() + s * l.in;
    for (std::size_t o = 0; o < l.out; ++o) {
      const T go = g[o];
      T* dwr = dw + o * l.in;
      const T* wr = w + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) {
        dwr[i] += go * xs[i];
        if (gx) gx[i] += wr[i] * go;
      }
      if (db) db[o] += go;
    }
  }
}

template <class T>
void conv_backward(const Conv2d& l, const Shape& in_shape, std::size_t n,
                   std::span<const T> p, std::span<const T> x,
                   std::span<const T> dy, std::span<T> dp, std::span<T> dx) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t K = l.kernel, S = l.stride;
  const auto pad = static_cast<std::ptrdiff_t>(l.pad);
  const std::size_t OH = (H + 2 * l.pad - K) / S + 1;
  const std::size_t OW = (W + 2 * l.pad - K) / S + 1;
  const T* w = p.data();
  T* dw = dp.data();
  T* db = l.bias ? dp.data() + l.out_ch * C * K * K : nullptr;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < l.out_ch; ++o) {
      const T* g = dy.data() + (s * l.out_ch + o) * OH * OW;
      if (db) {
        for (std::size_t k = 0; k < OH * OW; ++k) db[o] += g[k];
      }
      for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data() + (s * C + c) * H * W;
        T* gxc = dx.empty() ? nullptr : dx.data() + (s * C + c) * H * W;
        const std::size_t wbase = (o * C + c) * K * K;
        for (std::size_t oh = 0; oh < OH; ++oh) {
          for (std::size_t ow = 0; ow < OW; ++ow) {
            const T go = g[oh * OW + ow];
            for (std::size_t kh = 0; kh < K; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(oh * S + kh) - pad;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kw = 0; kw < K; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * S + kw) - pad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xi =
                    static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
                dw[wbase + kh * K + kw] += go * xc[xi];
                if (gxc) gxc[xi] += w[wbase + kh * K + kw] * go;
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void pool_backward(bool is_max, std::size_t k, const Shape& in_shape,
                   std::size_t n, std::span<const T> x, std::span<const T> dy,
                   std::span<T> dx) {
  const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
  const std::size_t OH = H / k, OW = W / k;
  const T inv = T{1} / static_cast<T>(k * k);
  for (std::size_t plane = 0; plane < n * C; ++plane) {
    const T* xp = x.data() + plane * H * W;
    T* gp = dx.data() + plane * H * W;
    const T* g = dy.data() + plane * OH * OW;
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const T go = g[oh * OW + ow];
        if (is_max) {
          // Route to the first maximum, matching the forward scan order.
          std::size_t best = (oh * k) * W + ow * k;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              const std::size_t idx = (oh * k + i) * W + ow * k + j;
              if (xp[idx] > xp[best]) best = idx;
            }
          }
          gp[best] += go;
        } else {
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              gp[(oh * k + i) * W + ow * k + j] += go * inv;
            }
          }
        }
      }
    }
  }
}

}  // namespace

void require_backprop_support(const ModelSpec& spec) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<BatchNorm>(spec.layers[i])) {
      throw UnsupportedLayerError("layer " + std::to_string(i) +
                                  ": no analytic gradient for BatchNorm; "
                                  "use central differences");
    }
  }
}

namespace {

// Reverse pass of dy (gradient on the outputs) through every layer, using
// the activations cached by a forward pass. Fills the parameter gradient
// and, when want_input is set, returns the gradient on the inputs.
template <class T>
std::vector<T> pullback(const ModelSpec& spec, const std::vector<Shape>& shapes,
                        std::span<const T> theta, const FeatureCache<T>& cache,
                        std::size_t n, std::vector<T> dy, std::span<T> grad,
                        bool want_input) {
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const Layer& layer = spec.layers[li];
    const Shape& in_shape = shapes[li];
    const auto x = cache.activation(li).data();
    const auto [offset, count] = detail::layer_param_range(spec, li);
    const auto p = theta.subspan(offset, count);
    const auto dp = grad.subspan(offset, count);
    const bool need_dx = li > 0 || want_input;
    std::vector<T> dx(need_dx ? n * shape_numel(in_shape) : 0, T{0});

    if (const auto* l = std::get_if<Dense>(&layer)) {
      dense_backward<T>(*l, n, p, x, dy, dp, dx);
    } else if (const auto* l = std::get_if<Conv2d>(&layer)) {
      conv_backward<T>(*l, in_shape, n, p, x, dy, dp, dx);
    } else if (std::holds_alternative<ReLU>(layer)) {
      for (std::size_t k = 0; k < dx.size(); ++k) {
        dx[k] = x[k] > T{0} ? dy[k] : T{0};
      }
    } else if (const auto* l = std::get_if<MaxPool>(&layer)) {
      if (!dx.empty()) pool_backward<T>(true, l->k, in_shape, n, x, dy, dx);
    } else if (const auto* l = std::get_if<AvgPool>(&layer)) {
      if (!dx.empty()) pool_backward<T>(false, l->k, in_shape, n, x, dy, dx);
    } else {
      std::copy_n(dy.begin(), dx.size(), dx.begin());
    }
    dy = std::move(dx);
  }
  for (T v : grad) {
    if (!std::isfinite(v)) throw NumericError("non-finite gradient");
  }
  return dy;
}

}  // namespace

template <class T>
GradVector<T> backprop_grad(const ModelSpec& spec, std::span<const T> theta,
                            const Batch<T>& batch) {
  require_backprop_support(spec);
  const std::vector<Shape> shapes = infer_shapes(spec);
  ParamVector<T> params(std::vector<T>(theta.begin(), theta.end()),
                        segment_table(spec));
  const ForwardResult<T> fwd = forward(spec, params, batch);
  const std::size_t n = batch.size();
  const std::size_t classes = shapes.back()[0];

  // d loss / d logits = (softmax - onehot) / n
  std::vector<T> dy(n * classes);
  const auto logits = fwd.logits.data();
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.data() + s * classes;
    double m = z[0];
    for (std::size_t j = 1; j < classes; ++j) m = std::max(m, static_cast<double>(z[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(z[j] - m);
    for (std::size_t j = 0; j < classes; ++j) {
      double pj = std::exp(z[j] - m) / sum;
      if (j == batch.labels[s]) pj -= 1.0;
      dy[s * classes + j] = static_cast<T>(pj / static_cast<double>(n));
    }
  }

  GradVector<T> grad(theta.size(), T{0});
  pullback<T>(spec, shapes, theta, fwd.cache, n, std::move(dy), grad, false);
  return grad;
}

template <class T>
VjpResult<T> backprop_vjp(const ModelSpec& spec, std::span<const T> theta,
                          const Tensor<T>& inputs, std::span<const T> d_outputs) {
  require_backprop_support(spec);
  const std::vector<Shape> shapes = infer_shapes(spec);
  const std::size_t n = inputs.shape().empty() ? 0 : inputs.shape()[0];
  if (d_outputs.size() != n * shapes.back()[0]) {
    throw ShapeError("output gradient has " + std::to_string(d_outputs.size()) +
                     " entries, expected " + std::to_string(n * shapes.back()[0]));
  }
  ParamVector<T> params(std::vector<T>(theta.begin(), theta.end()),
                        segment_table(spec));
  const Batch<T> batch{inputs, std::vector<std::size_t>(n, 0)};
  const ForwardResult<T> fwd = forward(spec, params, batch);
  VjpResult<T> out;
  out.params.assign(theta.size(), T{0});
  out.inputs = pullback<T>(spec, shapes, theta, fwd.cache, n,
                           std::vector<T>(d_outputs.begin(), d_outputs.end()),
                           out.params, true);
  return out;
}

GradVector<double> central_fd_grad(const Objective<double>& f,
                                   std::span<const double> theta, double mu) {
  if (!(mu > 0.0)) throw RangeError("smoothing parameter mu must be > 0");
  std::vector<double> scratch(theta.begin(), theta.end());
  GradVector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    scratch[i] = theta[i] + mu;
    const double up = f(scratch);
    scratch[i] = theta[i] - mu;
    const double down = f(scratch);
    scratch[i] = theta[i];
    grad[i] = (up - down) / (2.0 * mu);
  }
  return grad;
}

namespace {

GradVector<double> hvp_from(const GradFn& grad, std::span<const double> theta,
                            std::span<const double> g0,
                            std::span<const double> g, double mu) {
  if (!(mu > 0.0)) throw RangeError("smoothing parameter mu must be > 0");
  if (g.size() != theta.size() || g0.size() != theta.size()) {
    throw ShapeError("gradient length mismatch");
  }
  std::vector<double> shifted(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    shifted[i] = theta[i] + mu * g[i];
  }
  const GradVector<double> g1 = grad(shifted);
  GradVector<double> hg(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) hg[i] = (g1[i] - g0[i]) / mu;
  return hg;
}

}  // namespace

GradVector<double> hessian_grad_product(const GradFn& grad,
                                        std::span<const double> theta,
                                        double mu) {
  const GradVector<double> g = grad(theta);
  return hvp_from(grad, theta, g, g, mu);
}

GradVector<double> hessian_grad_product(const GradFn& grad,
                                        std::span<const double> theta,
                                        std::span<const double> g, double mu) {
  return hvp_from(grad, theta, grad(theta), g, mu);
}

template GradVector<float> backprop_grad<float>(const ModelSpec&,
                                                std::span<const float>,
                                                const Batch<float>&);
template GradVector<double> backprop_grad<double>(const ModelSpec&,
                                                  std::span<const double>,
                                                  const Batch<double>&);
template VjpResult<float> backprop_vjp<float>(const ModelSpec&, std::span<const float>,
                                              const Tensor<float>&,
                                              std::span<const float>);
template VjpResult<double> backprop_vjp<double>(const ModelSpec&,
                                                std::span<const double>,
                                                const Tensor<double>&,
                                                std::span<const double>);

}  // namespace zoforge
