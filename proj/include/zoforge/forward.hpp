#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "zoforge/model.hpp"
#include "zoforge/tensor.hpp"

namespace zoforge {

template <class T>
struct Batch {
  Tensor<T> inputs;                 // N x input shape
  std::vector<std::size_t> labels;  // N class indices

  std::size_t size() const { return labels.size(); }
};

// Activations z_0 (the batch input) through z_L of one forward pass, plus
// digests of every layer's parameters and of the batch they were computed
// from. Immutable once built by forward().
template <class T>
class FeatureCache {
 public:
  FeatureCache() = default;
  FeatureCache(std::vector<Tensor<T>> activations,
               std::vector<std::uint64_t> layer_digests,
               std::uint64_t batch_digest)
      : activations_(std::move(activations)),
        layer_digests_(std::move(layer_digests)),
        batch_digest_(batch_digest) {}

  std::size_t depth() const { return layer_digests_.size(); }
  // z_l: output of the first l layers; z_0 is the input.
  const Tensor<T>& activation(std::size_t l) const { return activations_.at(l); }
  std::uint64_t layer_digest(std::size_t layer) const {
    return layer_digests_.at(layer);
  }
  std::uint64_t batch_digest() const { return batch_digest_; }

 private:
  std::vector<Tensor<T>> activations_;
  std::vector<std::uint64_t> layer_digests_;
  std::uint64_t batch_digest_ = 0;
};

template <class T>
struct ForwardResult {
  double loss = 0.0;
  Tensor<T> logits;
  FeatureCache<T> cache;
};

enum class ReuseCheck {
  kDefault,  // verify unless built with NDEBUG
  kVerify,
  kTrust,
};

// Mean softmax cross-entropy over the batch. Batch-norm layers normalize with
// the statistics of this batch.
template <class T>
ForwardResult<T> forward(const ModelSpec& spec, const ParamVector<T>& theta,
                         const Batch<T>& batch);

// Loss only; does not retain activations.
template <class T>
double forward_loss(const ModelSpec& spec, std::span<const T> theta,
                    const Batch<T>& batch);

// Resumes evaluation at z_l and runs layers l..L-1 (0-based), so any
// perturbation confined to layers >= l gives the same bits as forward().
// `l` is the index of the first layer that must be recomputed.
template <class T>
double forward_from(const ModelSpec& spec, std::span<const T> theta,
                    const Batch<T>& batch, const FeatureCache<T>& cache,
                    std::size_t l, ReuseCheck check = ReuseCheck::kDefault);

template <class T>
double forward_from(const ModelSpec& spec, const ParamVector<T>& theta,
                    const Batch<T>& batch, const FeatureCache<T>& cache,
                    std::size_t l, ReuseCheck check = ReuseCheck::kDefault) {
  return forward_from(spec, theta.values(), batch, cache, l, check);
}

// Logits for a batch (batch-norm statistics from the batch itself).
template <class T>
Tensor<T> predict(const ModelSpec& spec, std::span<const T> theta,
                  const Tensor<T>& inputs);

// Softmax cross-entropy of a logit matrix; accumulates in double.
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits,
                             std::span<const std::size_t> labels);

std::uint64_t fnv1a(const void* data, std::size_t bytes,
                    std::uint64_t h = 0xcbf29ce484222325ULL);

namespace detail {

// Evaluates layer `layer_index` for a batch of n samples. `in_shape` is the
// per-sample input shape. Exposed for the analytic oracle.
template <class T>
void apply_layer(const Layer& layer, const Shape& in_shape, std::size_t n,
                 std::span<const T> params, std::span<const T> in,
                 std::span<T> out);

// Parameter slice of a layer inside the flat vector (empty when none).
std::pair<std::size_t, std::size_t> layer_param_range(const ModelSpec& spec,
                                                      std::size_t layer);

}  // namespace detail

}  // namespace zoforge
