#include "zoforge/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "zoforge/fo_oracle.hpp"
#include "zoforge/objective.hpp"
#include "zoforge/parallel.hpp"
#include "zoforge/pruning.hpp"

namespace zoforge {

namespace {

using Clock = std::chrono::steady_clock;

using namespace seed_stream;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <class T>
struct Loop {
  Loop(const ModelSpec& s, const TrainData<T>& d, const TrainConfig& c,
       ParamVector<T> start)
      : spec(s), data(d), cfg(c), theta(std::move(start)) {}

  const ModelSpec& spec;
  const TrainData<T>& data;
  const TrainConfig& cfg;
  ParamVector<T> theta;
  std::vector<std::uint8_t> trainable;  // empty: all
  TrainResult<T> result;
  std::uint64_t queries = 0;
  std::uint64_t step = 0;

  // Returns the gradient for one batch plus its loss at theta.
  std::function<GradEstimate<T>(const Batch<T>&)> gradient;
  std::function<void(std::size_t epoch)> on_epoch_start;

  void run() {
    OptState<T> state(theta.size());
    std::mt19937_64 shuffle(derive_seed(cfg.seed, kShuffleStream));
    std::vector<std::size_t> rows(data.train.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const Dataset<T>& eval = data.eval.size() ? data.eval : data.train;
    const auto start = Clock::now();

    for (std::size_t t = 0; t < cfg.epochs; ++t) {
      if (on_epoch_start) on_epoch_start(t);
      std::shuffle(rows.begin(), rows.end(), shuffle);
      const double lr = cosine_lr(t, cfg.epochs, cfg.lr0);
      EpochMetrics m;
      m.epoch = t;
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t b = 0; b < rows.size(); b += cfg.batch_size) {
        const std::size_t end = std::min(rows.size(), b + cfg.batch_size);
        const Batch<T> batch = data.train.gather(
            std::span<const std::size_t>(rows).subspan(b, end - b));
        const GradEstimate<T> est = gradient(batch);
        queries += est.queries;
        result.estimate_queries += est.queries;
        m.stages += est.timings;
        loss_sum += est.base_value;
        ++batches;
        sgd_step<T>(theta.values(), est.grad, state, lr, cfg.momentum,
                    cfg.weight_decay, trainable);
        ++step;
      }
      m.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
      m.eval_acc = accuracy<T>(spec, theta.values(), eval);
      m.queries = queries;
      m.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      result.metrics.epochs.push_back(m);
    }
    result.theta = theta;
  }
};

template <class T>
CoordinateSet zo_grasp_mask(const ModelSpec& spec, const TrainData<T>& data,
                            const TrainConfig& cfg, std::span<const T> theta,
                            std::size_t refresh, std::uint64_t& queries) {
  const Batch<T> batch = grasp_batch(data.train, cfg.batch_size, cfg.seed, refresh);
  const auto f = make_loss_objective(spec, batch);
  const PruneScores s = zo_grasp_scores<T>(
      f, theta, cfg.grasp_q, cfg.mu, derive_seed(cfg.seed, kGraspEstimateBase + refresh));
  queries += s.queries;
  return prune_mask_global(s.values, cfg.sparsity);
}

template <class T>
ParamVector<T> starting_point(const ModelSpec& spec, const TrainConfig& cfg,
                              const ParamVector<T>* initial) {
  if (initial) {
    if (initial->size() != param_count(spec)) {
      throw ShapeError("initial parameters do not match the model");
    }
    return *initial;
  }
  return init_params<T>(spec, derive_seed(cfg.seed, kInitStream));
}

// Zeroes coordinates outside the mask and returns per-coordinate flags.
template <class T>
std::vector<std::uint8_t> apply_weight_mask(ParamVector<T>& theta,
                                            const CoordinateSet& mask) {
  std::vector<std::uint8_t> flags(theta.size(), 0);
  for (std::size_t i : mask.indices()) flags[i] = 1;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!flags[i]) theta[i] = T{0};
  }
  return flags;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kDeepZero: return "deepzero";
    case TrainMode::kM1: return "m1";
    case TrainMode::kM2: return "m2";
    case TrainMode::kFo: return "fo";
    case TrainMode::kRge: return "rge";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  for (auto m : {TrainMode::kDeepZero, TrainMode::kM1, TrainMode::kM2,
                 TrainMode::kFo, TrainMode::kRge}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("mode: unknown training mode '" + name +
                    "' (expected deepzero, m1, m2, fo or rge)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (k_sparse < 1) fail("k_sparse", "must be >= 1");
  if (workers < 1) fail("workers", "must be >= 1");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    fail("sparsity", "must lie in [0, 1), got " + fmt(sparsity));
  }
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) fail("lr0", "must be >= 0");
  if (!(momentum >= 0.0) || !std::isfinite(momentum)) fail("momentum", "must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    fail("weight_decay", "must be >= 0");
  }
  if (!(mu > 0.0) || !std::isfinite(mu)) fail("mu", "must be > 0");
  if (grasp_q < 1) fail("grasp_q", "must be >= 1");
}

template <class T>
Batch<T> grasp_batch(const Dataset<T>& train, std::size_t batch_size, std::uint64_t seed,
                     std::size_t refresh) {
  std::vector<std::size_t> rows(train.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kGraspBatchBase + refresh));
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(rows.size(), batch_size));
  return train.gather(rows);
}

template <class T>
void sgd_step(std::span<T> theta, std::span<const T> g, OptState<T>& state,
              double lr, double momentum, double weight_decay,
              std::span<const std::uint8_t> trainable) {
  if (g.size() != theta.size() || state.buffer.size() != theta.size() ||
      (!trainable.empty() && trainable.size() != theta.size())) {
    throw ShapeError("sgd_step: parameter, gradient and buffer lengths differ");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    const double gi = static_cast<double>(g[i]) + weight_decay * theta[i];
    state.buffer[i] = static_cast<T>(momentum * state.buffer[i] + gi);
    theta[i] = static_cast<T>(theta[i] - lr * state.buffer[i]);
  }
  ++state.step;
}

double cosine_lr(std::size_t t, std::size_t T, double lr0) {
  if (T == 0 || t > T) throw RangeError("cosine_lr needs 0 <= t <= T, T >= 1");
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                         static_cast<double>(T)));
}

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
  out << kMetricsHeader << '\n';
  for (const auto& m : metrics.epochs) {
    out << m.epoch << ',' << fmt(m.train_loss) << ',' << fmt(m.eval_acc) << ','
        << m.queries << ',' << fmt(m.seconds) << ',' << fmt(m.stages.dv) << ','
        << fmt(m.stages.wp) << ',' << fmt(m.stages.mi) << ',' << fmt(m.stages.ao)
        << '\n';
  }
}

template <class T>
double accuracy(const ModelSpec& spec, std::span<const T> theta,
                const Dataset<T>& data) {
  if (data.size() == 0) return 0.0;
  const Batch<T> all = data.all();
  const Tensor<T> logits = predict<T>(spec, theta, all.inputs);
  const std::size_t c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < all.size(); ++s) {
    const auto row = logits.data().subspan(s * c, c);
    const auto best = static_cast<std::size_t>(
        std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == all.labels[s];
  }
  return static_cast<double>(hits) / static_cast<double>(all.size());
}

template <class T>
TrainResult<T> deepzero_train(const ModelSpec& spec, const TrainData<T>& data,
                              TrainConfig cfg, const ParamVector<T>* initial) {
  cfg.mode = TrainMode::kDeepZero;
  return train(spec, data, cfg, initial);
}

template <class T>
TrainResult<T> fo_train(const ModelSpec& spec, const TrainData<T>& data,
                        TrainConfig cfg, const ParamVector<T>* initial,
                        const CoordinateSet* weight_mask) {
  cfg.mode = TrainMode::kFo;
  cfg.validate();
  require_backprop_support(spec);
  Loop<T> loop(spec, data, cfg, starting_point(spec, cfg, initial));
  if (weight_mask) loop.trainable = apply_weight_mask(loop.theta, *weight_mask);
  loop.gradient = [&](const Batch<T>& batch) {
    GradEstimate<T> est;
    const auto t0 = Clock::now();
    est.base_value = forward_loss<T>(spec, loop.theta.values(), batch);
    est.grad = backprop_grad<T>(spec, loop.theta.values(), batch);
    est.timings.mi = std::chrono::duration<double>(Clock::now() - t0).count();
    est.queries = 0;
    return est;
  };
  loop.run();
  if (weight_mask) loop.result.initial_mask = *weight_mask;
  return std::move(loop.result);
}

template <class T>
TrainResult<T> train(const ModelSpec& spec, const TrainData<T>& data,
                     const TrainConfig& cfg, const ParamVector<T>* initial) {
  cfg.validate();
  if (cfg.mode == TrainMode::kFo) return fo_train(spec, data, cfg, initial);

  Loop<T> loop(spec, data, cfg, starting_point(spec, cfg, initial));
  const std::size_t d = loop.theta.size();
  const auto segments = loop.theta.segments();
  const bool prune = cfg.sparsity > 0.0;
  CoordinateSet active = CoordinateSet::full(d);

  auto grasp = [&](std::size_t refresh) {
    const CoordinateSet mask =
        zo_grasp_mask<T>(spec, data, cfg, loop.theta.values(), refresh, loop.queries);
    loop.result.grasp_queries += zo_grasp_query_cost(d, cfg.grasp_q);
    ++loop.result.grasp_refreshes;
    return mask;
  };

  auto cge_step = [&](const Batch<T>& batch) {
    return cge_parallel<T>(spec, loop.theta.values(), batch, active, cfg.mu,
                           cfg.workers, cfg.feature_reuse);
  };

  switch (cfg.mode) {
    case TrainMode::kDeepZero:
      if (prune) {
        loop.result.initial_mask = grasp(0);
        loop.result.lpr = lpr_from_mask(loop.result.initial_mask, segments);
        loop.on_epoch_start = [&](std::size_t t) {
          if (t % cfg.k_sparse == 0) {
            active = sample_dynamic_mask(loop.result.lpr, segments,
                                         derive_seed(cfg.seed, kMaskBase + t));
          }
        };
      }
      loop.gradient = cge_step;
      break;
    case TrainMode::kM1:
      if (prune) {
        loop.on_epoch_start = [&](std::size_t t) {
          if (t % cfg.k_sparse == 0) {
            active = grasp(t / cfg.k_sparse);
            if (t == 0) {
              loop.result.initial_mask = active;
              loop.result.lpr = lpr_from_mask(active, segments);
            }
          }
        };
      }
      loop.gradient = cge_step;
      break;
    case TrainMode::kM2:
      if (prune) {
        active = grasp(0);
        loop.result.initial_mask = active;
        loop.result.lpr = lpr_from_mask(active, segments);
        loop.trainable = apply_weight_mask(loop.theta, active);
      }
      loop.gradient = cge_step;
      break;
    case TrainMode::kRge:
      loop.gradient = [&](const Batch<T>& batch) {
        const auto f = make_loss_objective(spec, batch);
        return rge<T>(f, loop.theta.values(), cfg.rge_q ? cfg.rge_q : d, cfg.mu,
                      derive_seed(cfg.seed, kRgeBase + loop.step));
      };
      break;
    case TrainMode::kFo:
      break;
  }
  loop.run();
  return std::move(loop.result);
}

template <class T>
void save_checkpoint(const std::string& path, const ParamVector<T>& theta,
                     std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << "zoforge-checkpoint 1\n"
      << "scalar " << (sizeof(T) == 4 ? "float32" : "float64") << '\n'
      << "d " << theta.size() << '\n'
      << "seed " << seed << '\n'
      << "segments " << theta.segments().size() << '\n';
  for (const auto& s : theta.segments()) {
    out << s.offset << ' ' << s.length << ' ' << s.layer << '\n';
  }
  out << "end\n";
  out.write(reinterpret_cast<const char*>(theta.values().data()),
            static_cast<std::streamsize>(theta.size() * sizeof(T)));
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

template <class T>
ParamVector<T> load_checkpoint(const std::string& path, std::uint64_t* seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::string magic, key, scalar;
  int version = 0;
  std::size_t d = 0, nseg = 0;
  std::uint64_t s = 0;
  in >> magic >> version >> key >> scalar;
  const std::string want = sizeof(T) == 4 ? "float32" : "float64";
  if (magic != "zoforge-checkpoint" || version != 1 || key != "scalar" ||
      scalar != want) {
    throw ConfigError("'" + path + "' is not a " + want + " checkpoint");
  }
  in >> key >> d;
  if (key != "d") throw ConfigError("checkpoint header: expected d");
  in >> key >> s;
  if (key != "seed") throw ConfigError("checkpoint header: expected seed");
  in >> key >> nseg;
  if (key != "segments") throw ConfigError("checkpoint header: expected segments");
  std::vector<Segment> segs(nseg);
  for (auto& sg : segs) in >> sg.offset >> sg.length >> sg.layer;
  in >> key;
  if (key != "end" || in.get() != '\n') {
    throw ConfigError("checkpoint header: expected end");
  }
  std::vector<T> values(d);
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(d * sizeof(T)))) {
    throw ConfigError("checkpoint '" + path + "' is truncated");
  }
  if (seed) *seed = s;
  return ParamVector<T>(std::move(values), std::move(segs));
}

#define ZOFORGE_INSTANTIATE(T)                                                  \
  template Batch<T> grasp_batch<T>(const Dataset<T>&, std::size_t, std::uint64_t, \
                                   std::size_t);                                \
  template void sgd_step<T>(std::span<T>, std::span<const T>, OptState<T>&,      \
                            double, double, double, std::span<const std::uint8_t>); \
  template double accuracy<T>(const ModelSpec&, std::span<const T>,             \
                              const Dataset<T>&);                               \
  template TrainResult<T> train<T>(const ModelSpec&, const TrainData<T>&,        \
                                   const TrainConfig&, const ParamVector<T>*);  \
  template TrainResult<T> deepzero_train<T>(const ModelSpec&, const TrainData<T>&, \
                                            TrainConfig, const ParamVector<T>*); \
  template TrainResult<T> fo_train<T>(const ModelSpec&, const TrainData<T>&,     \
                                      TrainConfig, const ParamVector<T>*,       \
                                      const CoordinateSet*);                    \
  template void save_checkpoint<T>(const std::string&, const ParamVector<T>&,   \
                                   std::uint64_t);                              \
  template ParamVector<T> load_checkpoint<T>(const std::string&, std::uint64_t*);

ZOFORGE_INSTANTIATE(float)
ZOFORGE_INSTANTIATE(double)

#undef ZOFORGE_INSTANTIATE

}  // namespace zoforge
