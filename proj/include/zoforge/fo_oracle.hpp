#pragma once

#include <functional>
#include <span>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/forward.hpp"
#include "zoforge/objective.hpp"

namespace zoforge {

// Analytic gradient of the mean batch loss. Supports Dense, Conv2d, ReLU,
// MaxPool, AvgPool and Flatten; throws UnsupportedLayerError on BatchNorm.
template <class T>
GradVector<T> backprop_grad(const ModelSpec& spec, std::span<const T> theta,
                            const Batch<T>& batch);

template <class T>
GradVector<T> backprop_grad(const ModelSpec& spec, const ParamVector<T>& theta,
                            const Batch<T>& batch) {
  return backprop_grad<T>(spec, theta.values(), batch);
}

template <class T>
struct VjpResult {
  GradVector<T> params;
  std::vector<T> inputs;
};

// Pulls an upstream gradient on the network outputs (n x outputs, as from
// predict) back to the parameters and the inputs. No loss is involved.
template <class T>
VjpResult<T> backprop_vjp(const ModelSpec& spec, std::span<const T> theta,
                          const Tensor<T>& inputs, std::span<const T> d_outputs);

// Throws UnsupportedLayerError when backprop_grad cannot handle the model.
void require_backprop_support(const ModelSpec& spec);

// (f(theta + mu e_i) - f(theta - mu e_i)) / (2 mu) per coordinate; 2d queries.
GradVector<double> central_fd_grad(const Objective<double>& f,
                                   std::span<const double> theta, double mu);

using GradFn = std::function<GradVector<double>(std::span<const double>)>;

// (grad(theta + mu g) - grad(theta)) / mu with g = grad(theta).
GradVector<double> hessian_grad_product(const GradFn& grad,
                                        std::span<const double> theta,
                                        double mu);

// Same, with the gradient at theta already known.
GradVector<double> hessian_grad_product(const GradFn& grad,
                                        std::span<const double> theta,
                                        std::span<const double> g, double mu);

}  // namespace zoforge
