#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "zoforge/coordinate_set.hpp"
#include "zoforge/data.hpp"
#include "zoforge/estimators.hpp"
#include "zoforge/model.hpp"

namespace zoforge {

// Child streams of TrainConfig::seed (see derive_seed). Refresh, epoch or
// step numbers are added to the *_base values.
namespace seed_stream {
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kGraspEstimateBase = 1000;
inline constexpr std::uint64_t kGraspBatchBase = 2000;
inline constexpr std::uint64_t kMaskBase = 3000;
inline constexpr std::uint64_t kRgeBase = 1000000;
}  // namespace seed_stream

enum class TrainMode { kDeepZero, kM1, kM2, kFo, kRge };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);  // throws ConfigError

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double mu = kDefaultMu;
  double sparsity = 0.9;       // pruning ratio p
  std::size_t k_sparse = 1;    // epochs between sparsity refreshes
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kDeepZero;
  std::size_t grasp_q = 192;   // directions per ZO-GraSP estimate
  std::size_t rge_q = 0;       // directions per RGE step; 0 means d
  bool feature_reuse = true;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// batch_size rows of `train` shuffled by the ZO-GraSP batch stream of
// `seed` for refresh number `refresh`; what pruning scores are computed on.
template <class T>
Batch<T> grasp_batch(const Dataset<T>& train, std::size_t batch_size, std::uint64_t seed,
                     std::size_t refresh);

template <class T>
struct OptState {
  std::vector<T> buffer;
  std::uint64_t step = 0;

  explicit OptState(std::size_t d = 0) : buffer(d, T{0}) {}
};

// g' = g + w theta; buf = m buf + g'; theta -= lr buf. Coordinates whose
// `trainable` flag is 0 are left untouched, buffer included; an empty span
// means all coordinates train.
template <class T>
void sgd_step(std::span<T> theta, std::span<const T> g, OptState<T>& state,
              double lr, double momentum, double weight_decay,
              std::span<const std::uint8_t> trainable = {});

// lr0 * (1 + cos(pi t / T)) / 2
double cosine_lr(std::size_t t, std::size_t T, double lr0);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;   // mean loss at theta over the epoch's batches
  double eval_acc = 0.0;
  std::uint64_t queries = 0; // cumulative objective evaluations
  double seconds = 0.0;      // cumulative wall-clock
  StageTimings stages;       // this epoch
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;

  std::uint64_t total_queries() const {
    return epochs.empty() ? 0 : epochs.back().queries;
  }
  double final_accuracy() const {
    return epochs.empty() ? 0.0 : epochs.back().eval_acc;
  }
};

// Columns: epoch,train_loss,eval_acc,queries,seconds,dv_s,wp_s,mi_s,ao_s.
// The last five are wall-clock measurements.
inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,eval_acc,queries,seconds,dv_s,wp_s,mi_s,ao_s";
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics);

template <class T>
struct TrainData {
  Dataset<T> train;
  Dataset<T> eval;
};

template <class T>
struct TrainResult {
  ParamVector<T> theta;
  RunMetrics metrics;
  LprTable lpr;               // from the initial ZO-GraSP mask, if any
  CoordinateSet initial_mask; // ZO-GraSP mask at initialization, if any
  std::uint64_t grasp_queries = 0;
  std::size_t grasp_refreshes = 0;
  std::uint64_t estimate_queries = 0;  // sum over steps of |S_t| + 1
};

// Fraction of rows whose arg-max logit equals the label.
template <class T>
double accuracy(const ModelSpec& spec, std::span<const T> theta,
                const Dataset<T>& data);

// Runs the mode in cfg. `initial` overrides the seeded He initialization.
template <class T>
TrainResult<T> train(const ModelSpec& spec, const TrainData<T>& data,
                     const TrainConfig& cfg,
                     const ParamVector<T>* initial = nullptr);

// ZO-GraSP at initialization gives layer-wise ratios; every k_sparse
// epochs a fresh coordinate set is sampled under them and each step uses
// parallel sparse CGE. With sparsity 0 the full set is used and no
// pruning queries are spent.
template <class T>
TrainResult<T> deepzero_train(const ModelSpec& spec, const TrainData<T>& data,
                              TrainConfig cfg,
                              const ParamVector<T>* initial = nullptr);

// Backprop SGD. A weight mask zeroes and freezes every coordinate outside it.
template <class T>
TrainResult<T> fo_train(const ModelSpec& spec, const TrainData<T>& data,
                        TrainConfig cfg, const ParamVector<T>* initial = nullptr,
                        const CoordinateSet* weight_mask = nullptr);

// Writes d, seed, the segment table and the raw theta bytes.
template <class T>
void save_checkpoint(const std::string& path, const ParamVector<T>& theta,
                     std::uint64_t seed);
template <class T>
ParamVector<T> load_checkpoint(const std::string& path, std::uint64_t* seed = nullptr);

}  // namespace zoforge
