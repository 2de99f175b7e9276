#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "zoforge/blackbox.hpp"
#include "zoforge/parallel.hpp"
#include "zoforge/sol.hpp"
#include "zoforge/trainer.hpp"

namespace zoforge {
namespace {

SolConfig small_config(double nu = 1.0) {
  SolConfig c;
  c.coarse_n = 8;
  c.fine_factor = 2;
  c.nu = nu;
  c.dt = 0.45 * c.fine_dx() * c.fine_dx() / 1.5;
  c.steps = 6;
  c.unroll = 3;
  return c;
}

std::vector<double> wiggled_corrector(const ModelSpec& spec) {
  auto theta = init_corrector(spec, 5);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += 0.03 * std::sin(1.7 * i);
  return theta;
}

TEST(Quadratic, ValueExample) {
  const auto f = quadratic_objective({2.0, 4.0}, {0.0, 0.0});
  const std::vector<double> theta{1.0, 1.0};
  EXPECT_DOUBLE_EQ(f(theta), 3.0);
  EXPECT_EQ(f.queries(), 1u);
  EXPECT_THROW(quadratic_objective({1.0, 0.0}, {0.0, 0.0}), RangeError);
  EXPECT_THROW(quadratic_objective({1.0}, {0.0, 0.0}), RangeError);
}

TEST(Quadratic, CgeSgdReachesMinimizer) {
  const std::vector<double> a{2.0, 4.0, 1.0}, b{1.0, -2.0, 0.5};
  const auto f = quadratic_objective(a, b);
  std::vector<double> theta{3.0, 3.0, -3.0};
  OptState<double> st(theta.size());
  for (int step = 0; step < 200; ++step) {
    const auto est = cge<double>(f, theta, 1e-3);
    sgd_step<double>(theta, est.grad, st, 0.1, 0.0, 0.0);
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(theta[i], b[i] / a[i], 1e-3);
}

TEST(Quadratic, CgeBiasIsHalfMuDiagonal) {
  const std::vector<double> a{2.0, 4.0, 0.5}, b{0.3, -0.1, 1.0};
  const auto f = quadratic_objective(a, b);
  const std::vector<double> theta{0.7, -1.2, 2.5};
  const double mu = 1e-2;
  const auto est = cge<double>(f, theta, mu);
  const auto g = quadratic_gradient(a, b, theta);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(est.grad[i] - g[i], 0.5 * mu * a[i], 1e-9);
  }
}

TEST(Diffusion, ZeroAndConstantFieldsAreFixedPoints) {
  const SolConfig c = small_config();
  SimState zero{std::vector<double>(c.coarse_n, 0.0), 0};
  SimState flat{std::vector<double>(c.coarse_n, 0.37), 0};
  for (int k = 0; k < 10; ++k) {
    zero = coarse_step(zero, c);
    flat = coarse_step(flat, c);
  }
  for (double v : zero.grid) EXPECT_EQ(v, 0.0);
  for (double v : flat.grid) EXPECT_EQ(v, 0.37);
  EXPECT_EQ(flat.t, 10u);
}

TEST(Diffusion, SpikeConservesMass) {
  const SolConfig c = small_config();
  SimState s{std::vector<double>(c.coarse_n, 0.0), 0};
  s.grid[3] = 1.0;
  auto mass = [&](const SimState& x) {
    return std::accumulate(x.grid.begin(), x.grid.end(), 0.0) * c.coarse_dx();
  };
  const double m0 = mass(s);
  for (int k = 0; k < 100; ++k) s = coarse_step(s, c);
  EXPECT_NEAR(mass(s), m0, 1e-12);
  EXPECT_LT(s.grid[3], 1.0);

  std::vector<double> fine(c.fine_n(), 0.0);
  fine[5] = 1.0;
  const auto frames = fine_rollout(c, fine);
  const double fm = std::accumulate(frames.front().grid.begin(), frames.front().grid.end(), 0.0);
  const double lm = std::accumulate(frames.back().grid.begin(), frames.back().grid.end(), 0.0);
  EXPECT_NEAR(fm, lm, 1e-12);
}

TEST(Diffusion, StabilityIsChecked) {
  SolConfig c = small_config();
  c.dt = 0.51 * c.fine_dx() * c.fine_dx() / c.nu;
  EXPECT_THROW(c.validate(), StabilityError);
  EXPECT_THROW(coarse_step({std::vector<double>(c.coarse_n, 0.0), 0}, c), StabilityError);
  c = small_config();
  c.unroll = c.steps + 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Diffusion, FineRolloutFrames) {
  const SolConfig c = small_config();
  const auto ic = random_bumps(c, 3);
  const auto frames = fine_rollout(c, ic);
  ASSERT_EQ(frames.size(), c.steps + 1);
  EXPECT_EQ(frames[0].grid, cell_average(ic, c.fine_factor));
  EXPECT_EQ(frames[4].t, 4u);
  EXPECT_EQ(cell_average(std::vector<double>{1, 3, 5, 7}, 2), (std::vector<double>{2, 6}));
}

TEST(SolLoss, ZeroCorrectorIsSolverError) {
  const std::vector<SolTask> tasks{make_task(small_config(), 1)};
  const double loss = sol_loss(zero_corrector(), tasks);
  EXPECT_GT(loss, 0.0);
  // Same sum written out: two windows of three uncorrected steps.
  double manual = 0.0;
  for (std::size_t t0 : {0u, 3u}) {
    SimState s = tasks[0].reference[t0];
    for (std::size_t i = 0; i < 3; ++i) {
      s = coarse_step(s, tasks[0].cfg);
      double step = 0.0;
      for (std::size_t j = 0; j < s.grid.size(); ++j) {
        const double e = s.grid[j] - tasks[0].reference[t0 + i + 1].grid[j];
        step += e * e;
      }
      manual += step;
    }
  }
  EXPECT_EQ(loss, manual);
}

TEST(SolLoss, CheatingCorrectorGivesZero) {
  const std::vector<SolTask> tasks{make_task(small_config(0.9), 1),
                                   make_task(small_config(1.2), 2)};
  const Corrector cheat = [&](const std::vector<SimState>& states) {
    std::vector<double> c;
    for (std::size_t k = 0; k < states.size(); ++k) {
      const auto& y = tasks[k].reference[states[k].t].grid;
      for (std::size_t j = 0; j < y.size(); ++j) c.push_back(y[j] - states[k].grid[j]);
    }
    return c;
  };
  EXPECT_LT(sol_loss(cheat, tasks), 1e-28);
}

TEST(SolLoss, UnrollOneEqualsNonLoss) {
  std::vector<SolTask> tasks{make_task(small_config(0.9), 1), make_task(small_config(1.3), 2)};
  for (auto& t : tasks) t.cfg.unroll = 1;
  const ModelSpec spec = corrector_spec(8, 16);
  const auto theta = wiggled_corrector(spec);
  const double n1 = sol_loss(network_corrector(spec, theta), tasks) /
                    static_cast<double>(sol_term_count(tasks));
  EXPECT_NEAR(n1, non_loss_grad(spec, theta, tasks).loss, 1e-15 * n1);
}

TEST(SolLoss, TwoStepUnrollMatchesManualComposition) {
  SolConfig c = small_config();
  c.steps = 2;
  c.unroll = 2;
  const std::vector<SolTask> tasks{make_task(c, 4)};
  const ModelSpec spec = corrector_spec(8, 16);
  const auto theta = wiggled_corrector(spec);
  const Corrector net = network_corrector(spec, theta);

  std::vector<SimState> s{tasks[0].reference[0]};
  double manual = 0.0;
  for (std::size_t i = 1; i <= 2; ++i) {
    s[0] = coarse_step(s[0], c);
    const auto corr = net(s);
    for (std::size_t j = 0; j < 8; ++j) s[0].grid[j] += corr[j];
    double step = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      const double e = s[0].grid[j] - tasks[0].reference[i].grid[j];
      step += e * e;
    }
    manual += step;
  }
  EXPECT_EQ(sol_loss(net, tasks), manual);
}

TEST(SolLoss, ObjectiveCountsOneQueryPerEvaluation) {
  const std::vector<SolTask> tasks{make_task(small_config(), 1)};
  const ModelSpec spec = corrector_spec(8, 4);
  const Objective<double> f([&](std::span<const double> th) {
    return sol_loss(network_corrector(spec, th), tasks);
  });
  const auto theta = init_corrector(spec, 1);
  const double a = f(theta);
  EXPECT_EQ(f(theta), a);
  EXPECT_EQ(f.queries(), 2u);
}

TEST(SolGradient, AdjointMatchesCentralDifferences) {
  const std::vector<SolTask> tasks{make_task(small_config(0.8), 1),
                                   make_task(small_config(1.4), 2)};
  const ModelSpec spec = corrector_spec(8, 6);
  const auto theta = wiggled_corrector(spec);
  const auto g = sol_loss_grad(spec, theta, tasks);
  const double norm = static_cast<double>(sol_term_count(tasks));
  EXPECT_NEAR(g.loss, sol_loss(network_corrector(spec, theta), tasks) / norm, 1e-15);
  double scale = 0.0;
  for (double v : g.grad) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto up = theta, down = theta;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    const double fd = (sol_loss(network_corrector(spec, up), tasks) -
                       sol_loss(network_corrector(spec, down), tasks)) /
                      norm / 2e-5;
    EXPECT_NEAR(g.grad[i], fd, 1e-6 * scale) << "coordinate " << i;
  }
}

TEST(SolGradient, NonGradientMatchesCentralDifferences) {
  const std::vector<SolTask> tasks{make_task(small_config(1.1), 3)};
  const ModelSpec spec = corrector_spec(8, 6);
  const auto theta = wiggled_corrector(spec);
  const auto g = non_loss_grad(spec, theta, tasks);
  double scale = 0.0;
  for (double v : g.grad) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < theta.size(); i += 3) {
    auto up = theta, down = theta;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    const double fd =
        (non_loss_grad(spec, up, tasks).loss - non_loss_grad(spec, down, tasks).loss) / 2e-5;
    EXPECT_NEAR(g.grad[i], fd, 1e-6 * scale) << "coordinate " << i;
  }
}

TEST(ZoSol, SparseParallelMatchesSerialAndCountsQueries) {
  const std::vector<SolTask> tasks{make_task(small_config(), 1)};
  const ModelSpec spec = corrector_spec(8, 4);
  Objective<double> f([&](std::span<const double> th) {
    return sol_loss(network_corrector(spec, th), tasks);
  });
  const auto theta = wiggled_corrector(spec);
  const CoordinateSet S({0, 3, 17, 40, 41, 60}, theta.size());
  const auto serial = sparse_cge<double>(f, theta, 1e-4, S);
  for (std::size_t W : {1u, 2u, 3u, 8u}) {
    const auto par = sparse_cge_parallel<double>(f, theta, S, 1e-4, W);
    EXPECT_EQ(par.grad, serial.grad);
    EXPECT_EQ(par.queries, S.size() + 1);
  }

  SolStudyConfig cfg;
  cfg.iterations = 4;
  f.reset_queries();
  const auto trained = zo_sol_train(f, theta, cfg);
  const std::size_t kept =
      static_cast<std::size_t>(std::round(0.05 * static_cast<double>(theta.size())));
  EXPECT_EQ(f.queries(), 4 * (kept + 1));
  EXPECT_NE(trained, theta);
}

TEST(SolStudy, ReportHasAllVariants) {
  SolStudyConfig cfg;
  cfg.base.coarse_n = 8;
  cfg.base.steps = 8;
  cfg.base.unroll = 4;
  cfg.train_ics = 2;
  cfg.test_ics = 2;
  cfg.iterations = 3;
  const SolReport r = run_sol_study(cfg);
  ASSERT_EQ(r.variants.size(), 4u);
  EXPECT_EQ(r.variants[0].name, "SRC");
  EXPECT_EQ(r.get("NON").test_mae.size(), 3u);
  EXPECT_GT(r.get("ZO-SOL").queries, 0u);
  EXPECT_EQ(r.get("FO-SOL").queries, 0u);
  EXPECT_THROW(r.get("ADAM"), ConfigError);
  std::ostringstream a, b;
  write_sol_report_csv(a, r);
  write_sol_report_csv(b, run_sol_study(cfg));
  EXPECT_EQ(a.str(), b.str());

  cfg.sparsity = 1.0;
  EXPECT_THROW(run_sol_study(cfg), ConfigError);
}

}  // namespace
}  // namespace zoforge
