#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/model.hpp"
#include "zoforge/objective.hpp"

namespace zoforge {

// 1-D diffusion u_t = nu u_xx on [0, length] with zero-flux boundaries,
// explicit Euler in time. The coarse grid has coarse_n cells, the fine
// grid fine_factor times as many; both advance with the same dt.
struct SolConfig {
  std::size_t coarse_n = 16;
  std::size_t fine_factor = 4;
  double nu = 1.0;
  double dt = 1e-4;
  std::size_t steps = 32;   // horizon T
  std::size_t unroll = 16;  // n
  double length = 1.0;

  std::size_t fine_n() const { return coarse_n * fine_factor; }
  double coarse_dx() const { return length / static_cast<double>(coarse_n); }
  double fine_dx() const { return length / static_cast<double>(fine_n()); }

  // StabilityError when nu dt / dx^2 > 0.5 on either grid, ConfigError for
  // other bad fields (named in the message).
  void validate() const;
  bool operator==(const SolConfig&) const = default;
};

struct SimState {
  std::vector<double> grid;
  std::size_t t = 0;
};

// One explicit-Euler step on the coarse grid.
SimState coarse_step(const SimState& state, const SolConfig& cfg);

// Runs the fine grid for cfg.steps steps from a fine initial field and
// returns frames 0..steps, each cell-averaged onto the coarse grid.
std::vector<SimState> fine_rollout(const SolConfig& cfg,
                                   std::span<const double> fine_initial);

// Mean of each block of `factor` consecutive cells.
std::vector<double> cell_average(std::span<const double> fine, std::size_t factor);

// Sum of Gaussian bumps on the fine grid, as used for study initial fields.
std::vector<double> random_bumps(const SolConfig& cfg, std::uint64_t seed);

// One reference trajectory and the physics that produced it.
struct SolTask {
  SolConfig cfg;
  std::vector<SimState> reference;  // frames 0..cfg.steps
};

SolTask make_task(const SolConfig& cfg, std::uint64_t ic_seed);

// Additive corrections for a batch of coarse states (one per task, after
// the solver step, t set to the new time index). Returns the corrections
// row by row.
using Corrector = std::function<std::vector<double>(const std::vector<SimState>&)>;

Corrector zero_corrector();

// Dense width -> hidden -> width network with a ReLU in between.
ModelSpec corrector_spec(std::size_t width, std::size_t hidden = 16);

// He-initialized first layer, all-zero output layer (starts as the
// uncorrected solver).
std::vector<double> init_corrector(const ModelSpec& spec, std::uint64_t seed);

// Evaluates the network with the given parameters; both are held by
// reference.
Corrector network_corrector(const ModelSpec& spec, std::span<const double> theta);

// Sum over tasks, window starts t = 0, n, 2n, ... (t + n <= T) and unroll
// offsets i < n of || P(s) + C(P(s)) - y_{t+i+1} ||^2, where s starts at
// y_t and is replaced by the corrected state after every step. All tasks
// must share coarse_n, steps and unroll.
double sol_loss(const Corrector& corrector, std::span<const SolTask> tasks);

// Number of squared terms summed by sol_loss (for normalization).
std::size_t sol_term_count(std::span<const SolTask> tasks);

// Exact gradient of sol_loss / sol_term_count with respect to the corrector
// parameters, by an adjoint pass through the solver and the network.
struct SolGradient {
  double loss = 0.0;  // normalized
  std::vector<double> grad;
};
SolGradient sol_loss_grad(const ModelSpec& spec, std::span<const double> theta,
                          std::span<const SolTask> tasks);

// Non-interactive loss over pre-generated pairs (P(y_t), y_{t+1}) of every
// task, normalized like sol_loss_grad, with its backprop gradient.
SolGradient non_loss_grad(const ModelSpec& spec, std::span<const double> theta,
                          std::span<const SolTask> tasks);

// Mean |s_t - y_t| over t = 1..T and all cells, rolling the corrected
// solver from y_0 without resets, averaged over tasks.
double rollout_mae(const Corrector& corrector, std::span<const SolTask> tasks);

struct SolStudyConfig {
  // nu is replaced per task; dt is set from cfl.
  SolConfig base{.coarse_n = 16, .fine_factor = 2, .steps = 32, .unroll = 16};
  std::vector<double> train_nu{0.8, 1.0, 1.2, 1.4};
  std::vector<double> test_nu{0.9, 1.1, 1.3};
  std::size_t train_ics = 8;
  std::size_t test_ics = 8;
  double cfl = 0.45;  // fine-grid nu_max dt / dx^2
  std::size_t hidden = 16;
  std::size_t iterations = 300;
  double lr = 0.02;     // NON and FO-SOL
  double zo_lr = 0.1;   // ZO-SOL
  double mu = 1e-4;
  double sparsity = 0.95;
  std::size_t workers = 1;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const SolStudyConfig&) const = default;
};

struct SolVariant {
  std::string name;
  std::vector<double> test_mae;  // per test nu
  double mean_mae = 0.0;
  double train_loss = 0.0;       // normalized unrolled loss on training tasks
  std::uint64_t queries = 0;     // simulator queries (ZO-SOL only)
};

struct SolReport {
  std::vector<double> test_nu;
  std::vector<SolVariant> variants;  // SRC, NON, ZO-SOL, FO-SOL

  const SolVariant& get(const std::string& name) const;
};

// Trains a corrector from a black-box objective with sparse CGE and plain
// gradient descent. Sees nothing but f.
std::vector<double> zo_sol_train(const Objective<double>& f, std::vector<double> theta,
                                 const SolStudyConfig& cfg);

SolReport run_sol_study(const SolStudyConfig& cfg);

// Columns: variant,nu,mae,train_loss,queries. One row per test nu and one
// with nu=mean per variant.
void write_sol_report_csv(std::ostream& out, const SolReport& report);

}  // namespace zoforge
