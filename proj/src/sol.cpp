#include "zoforge/sol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "zoforge/coordinate_set.hpp"
#include "zoforge/fo_oracle.hpp"
#include "zoforge/parallel.hpp"
#include "zoforge/pruning.hpp"

namespace zoforge {

namespace {

// u + r (u_{i-1} - 2 u_i + u_{i+1}) with mirrored ghost cells. The operator
// is symmetric, so it is also its own adjoint.
std::vector<double> diffuse(std::span<const double> u, double r) {
  const std::size_t n = u.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? u[i] : u[i - 1];
    const double right = i + 1 == n ? u[i] : u[i + 1];
    out[i] = u[i] + r * ((left - u[i]) + (right - u[i]));
  }
  return out;
}

double ratio(const SolConfig& cfg, double dx) { return cfg.nu * cfg.dt / (dx * dx); }

void check_tasks(std::span<const SolTask> tasks) {
  if (tasks.empty()) throw ConfigError("tasks: at least one SOL task is required");
  const SolConfig& c0 = tasks[0].cfg;
  for (const SolTask& task : tasks) {
    const SolConfig& c = task.cfg;
    if (c.coarse_n != c0.coarse_n || c.steps != c0.steps || c.unroll != c0.unroll) {
      throw ConfigError("tasks: coarse_n, steps and unroll must agree across tasks");
    }
    if (task.reference.size() != c.steps + 1) {
      throw ShapeError("task reference has " + std::to_string(task.reference.size()) +
                       " frames, expected " + std::to_string(c.steps + 1));
    }
  }
}

double squared_error(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i];
    s += e * e;
  }
  return s;
}

Tensor<double> stack(const std::vector<SimState>& states) {
  const std::size_t width = states.empty() ? 0 : states[0].grid.size();
  std::vector<double> x;
  x.reserve(states.size() * width);
  for (const SimState& s : states) x.insert(x.end(), s.grid.begin(), s.grid.end());
  return Tensor<double>({states.size(), width}, std::move(x));
}

void add_correction(std::vector<SimState>& states, const std::vector<double>& c) {
  const std::size_t width = states.empty() ? 0 : states[0].grid.size();
  if (c.size() != states.size() * width) {
    throw ShapeError("corrector returned " + std::to_string(c.size()) + " values, expected " +
                     std::to_string(states.size() * width));
  }
  for (std::size_t k = 0; k < states.size(); ++k) {
    for (std::size_t j = 0; j < width; ++j) states[k].grid[j] += c[k * width + j];
  }
}

}  // namespace

void SolConfig::validate() const {
  if (coarse_n < 2) throw ConfigError("coarse_n: must be >= 2");
  if (fine_factor < 1) throw ConfigError("fine_factor: must be >= 1");
  if (!(nu > 0.0)) throw ConfigError("nu: must be > 0");
  if (!(dt > 0.0)) throw ConfigError("dt: must be > 0");
  if (!(length > 0.0)) throw ConfigError("length: must be > 0");
  if (unroll < 1 || unroll > steps) throw ConfigError("unroll: must be in [1, steps]");
  const double rc = ratio(*this, coarse_dx());
  const double rf = ratio(*this, fine_dx());
  if (rc > 0.5 || rf > 0.5) {
    throw StabilityError("explicit Euler unstable: nu dt / dx^2 = " + std::to_string(rf) +
                         " on the fine grid, " + std::to_string(rc) +
                         " on the coarse grid (limit 0.5)");
  }
}

SimState coarse_step(const SimState& state, const SolConfig& cfg) {
  cfg.validate();
  if (state.grid.size() != cfg.coarse_n) {
    throw ShapeError("coarse state has " + std::to_string(state.grid.size()) +
                     " cells, expected " + std::to_string(cfg.coarse_n));
  }
  return {diffuse(state.grid, ratio(cfg, cfg.coarse_dx())), state.t + 1};
}

std::vector<double> cell_average(std::span<const double> fine, std::size_t factor) {
  if (factor == 0 || fine.size() % factor != 0) {
    throw ShapeError("fine grid length is not a multiple of the coarsening factor");
  }
  std::vector<double> out(fine.size() / factor, 0.0);
  for (std::size_t i = 0; i < fine.size(); ++i) out[i / factor] += fine[i];
  for (double& v : out) v /= static_cast<double>(factor);
  return out;
}

std::vector<SimState> fine_rollout(const SolConfig& cfg,
                                   std::span<const double> fine_initial) {
  cfg.validate();
  if (fine_initial.size() != cfg.fine_n()) {
    throw ShapeError("fine initial field has " + std::to_string(fine_initial.size()) +
                     " cells, expected " + std::to_string(cfg.fine_n()));
  }
  const double r = ratio(cfg, cfg.fine_dx());
  std::vector<double> u(fine_initial.begin(), fine_initial.end());
  std::vector<SimState> frames;
  frames.reserve(cfg.steps + 1);
  frames.push_back({cell_average(u, cfg.fine_factor), 0});
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    u = diffuse(u, r);
    frames.push_back({cell_average(u, cfg.fine_factor), t});
  }
  return frames;
}

std::vector<double> random_bumps(const SolConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_real_distribution<double> center(0.15, 0.85), width(0.03, 0.08),
      height(0.5, 1.5);
  const std::size_t n = cfg.fine_n();
  std::vector<double> u(n, 0.0);
  const int bumps = count(rng);
  for (int b = 0; b < bumps; ++b) {
    const double c = center(rng) * cfg.length, w = width(rng) * cfg.length, h = height(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = (static_cast<double>(i) + 0.5) * cfg.fine_dx();
      u[i] += h * std::exp(-0.5 * (x - c) * (x - c) / (w * w));
    }
  }
  return u;
}

SolTask make_task(const SolConfig& cfg, std::uint64_t ic_seed) {
  return {cfg, fine_rollout(cfg, random_bumps(cfg, ic_seed))};
}

Corrector zero_corrector() {
  return [](const std::vector<SimState>& states) {
    return std::vector<double>(states.empty() ? 0 : states.size() * states[0].grid.size(),
                               0.0);
  };
}

ModelSpec corrector_spec(std::size_t width, std::size_t hidden) {
  return {{width}, {Dense{width, hidden}, ReLU{}, Dense{hidden, width}}};
}

std::vector<double> init_corrector(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector<double> theta = init_params<double>(spec, seed);
  const Segment& out = theta.segments().back();
  std::fill_n(theta.values().begin() + static_cast<std::ptrdiff_t>(out.offset), out.length,
              0.0);
  return {theta.values().begin(), theta.values().end()};
}

Corrector network_corrector(const ModelSpec& spec, std::span<const double> theta) {
  return [&spec, theta](const std::vector<SimState>& states) {
    const Tensor<double> y = predict<double>(spec, theta, stack(states));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
}

std::size_t sol_term_count(std::span<const SolTask> tasks) {
  check_tasks(tasks);
  const SolConfig& c = tasks[0].cfg;
  return tasks.size() * (c.steps / c.unroll) * c.unroll * c.coarse_n;
}

double sol_loss(const Corrector& corrector, std::span<const SolTask> tasks) {
  check_tasks(tasks);
  const std::size_t T = tasks[0].cfg.steps, n = tasks[0].cfg.unroll;
  double loss = 0.0;
  std::vector<SimState> states(tasks.size());
  for (std::size_t t = 0; t + n <= T; t += n) {
    for (std::size_t k = 0; k < tasks.size(); ++k) states[k] = tasks[k].reference[t];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        states[k] = coarse_step(states[k], tasks[k].cfg);
      }
      add_correction(states, corrector(states));
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        loss += squared_error(states[k].grid, tasks[k].reference[t + i + 1].grid);
      }
    }
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite SOL loss");
  return loss;
}

SolGradient sol_loss_grad(const ModelSpec& spec, std::span<const double> theta,
                          std::span<const SolTask> tasks) {
  check_tasks(tasks);
  const std::size_t T = tasks[0].cfg.steps, n = tasks[0].cfg.unroll;
  const std::size_t width = tasks[0].cfg.coarse_n, K = tasks.size();
  const double scale = 1.0 / static_cast<double>(sol_term_count(tasks));
  const Corrector net = network_corrector(spec, theta);

  SolGradient out;
  out.grad.assign(theta.size(), 0.0);
  std::vector<SimState> states(K);
  for (std::size_t t = 0; t + n <= T; t += n) {
    // Forward: keep the solver outputs (corrector inputs) and corrected states.
    std::vector<std::vector<SimState>> solved(n), corrected(n);
    for (std::size_t k = 0; k < K; ++k) states[k] = tasks[k].reference[t];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) states[k] = coarse_step(states[k], tasks[k].cfg);
      solved[i] = states;
      add_correction(states, net(states));
      corrected[i] = states;
      for (std::size_t k = 0; k < K; ++k) {
        out.loss += squared_error(states[k].grid, tasks[k].reference[t + i + 1].grid);
      }
    }
    // Adjoint, last unroll step first. lambda holds dL/d(corrected state).
    std::vector<double> lambda(K * width, 0.0);
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t k = 0; k < K; ++k) {
        const auto& s = corrected[i][k].grid;
        const auto& y = tasks[k].reference[t + i + 1].grid;
        for (std::size_t j = 0; j < width; ++j) {
          lambda[k * width + j] += 2.0 * scale * (s[j] - y[j]);
        }
      }
      const VjpResult<double> vjp =
          backprop_vjp<double>(spec, theta, stack(solved[i]), lambda);
      for (std::size_t p = 0; p < theta.size(); ++p) out.grad[p] += vjp.params[p];
      if (i == 0) break;  // the window start is data, not a variable
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> a(width);
        for (std::size_t j = 0; j < width; ++j) {
          a[j] = lambda[k * width + j] + vjp.inputs[k * width + j];
        }
        const auto back =
            diffuse(a, ratio(tasks[k].cfg, tasks[k].cfg.coarse_dx()));
        std::copy(back.begin(), back.end(), lambda.begin() + static_cast<std::ptrdiff_t>(k * width));
      }
    }
  }
  out.loss *= scale;
  return out;
}

SolGradient non_loss_grad(const ModelSpec& spec, std::span<const double> theta,
                          std::span<const SolTask> tasks) {
  check_tasks(tasks);
  const std::size_t T = tasks[0].cfg.steps, width = tasks[0].cfg.coarse_n;
  std::vector<SimState> inputs;
  std::vector<const std::vector<double>*> targets;
  for (const SolTask& task : tasks) {
    for (std::size_t t = 0; t < T; ++t) {
      inputs.push_back(coarse_step(task.reference[t], task.cfg));
      targets.push_back(&task.reference[t + 1].grid);
    }
  }
  const Tensor<double> x = stack(inputs);
  const Tensor<double> c = predict<double>(spec, theta, x);
  const double scale = 1.0 / static_cast<double>(inputs.size() * width);
  std::vector<double> d_out(c.numel());
  SolGradient out;
  for (std::size_t r = 0; r < inputs.size(); ++r) {
    for (std::size_t j = 0; j < width; ++j) {
      const double e = x[r * width + j] + c[r * width + j] - (*targets[r])[j];
      out.loss += e * e;
      d_out[r * width + j] = 2.0 * scale * e;
    }
  }
  out.loss *= scale;
  out.grad = backprop_vjp<double>(spec, theta, x, d_out).params;
  return out;
}

double rollout_mae(const Corrector& corrector, std::span<const SolTask> tasks) {
  check_tasks(tasks);
  const std::size_t T = tasks[0].cfg.steps, width = tasks[0].cfg.coarse_n;
  std::vector<SimState> states(tasks.size());
  for (std::size_t k = 0; k < tasks.size(); ++k) states[k] = tasks[k].reference[0];
  double total = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      states[k] = coarse_step(states[k], tasks[k].cfg);
    }
    add_correction(states, corrector(states));
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      for (std::size_t j = 0; j < width; ++j) {
        total += std::abs(states[k].grid[j] - tasks[k].reference[t].grid[j]);
      }
    }
  }
  return total / static_cast<double>(T * width * tasks.size());
}

void SolStudyConfig::validate() const {
  if (train_nu.empty()) throw ConfigError("train_nu: at least one value is required");
  if (test_nu.empty()) throw ConfigError("test_nu: at least one value is required");
  for (double v : train_nu) {
    if (!(v > 0.0)) throw ConfigError("train_nu: values must be > 0");
  }
  for (double v : test_nu) {
    if (!(v > 0.0)) throw ConfigError("test_nu: values must be > 0");
  }
  if (train_ics == 0) throw ConfigError("train_ics: must be >= 1");
  if (test_ics == 0) throw ConfigError("test_ics: must be >= 1");
  if (!(cfl > 0.0) || cfl > 0.5) throw ConfigError("cfl: must be in (0, 0.5]");
  if (hidden == 0) throw ConfigError("hidden: must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr: must be > 0");
  if (!(zo_lr > 0.0)) throw ConfigError("zo_lr: must be > 0");
  if (!(mu > 0.0)) throw ConfigError("mu: must be > 0");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity: must be in [0, 1)");
  if (workers == 0) throw ConfigError("workers: must be >= 1");
}

const SolVariant& SolReport::get(const std::string& name) const {
  for (const SolVariant& v : variants) {
    if (v.name == name) return v;
  }
  throw ConfigError("SOL report has no variant '" + name + "'");
}

std::vector<double> zo_sol_train(const Objective<double>& f, std::vector<double> theta,
                                 const SolStudyConfig& cfg) {
  const std::size_t d = theta.size();
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const CoordinateSet S = random_mask(d, cfg.sparsity, derive_seed(cfg.seed, 100 + step));
    const GradEstimate<double> est =
        sparse_cge_parallel<double>(f, theta, S, cfg.mu, cfg.workers);
    for (std::size_t i : S.indices()) theta[i] -= cfg.zo_lr * est.grad[i];
  }
  return theta;
}

namespace {

std::vector<SolTask> build_tasks(const SolStudyConfig& cfg, const std::vector<double>& nus,
                                 std::size_t ics, std::uint64_t stream) {
  std::vector<SolTask> tasks;
  for (std::size_t a = 0; a < nus.size(); ++a) {
    SolConfig c = cfg.base;
    c.nu = nus[a];
    for (std::size_t b = 0; b < ics; ++b) {
      tasks.push_back(make_task(c, derive_seed(cfg.seed, stream + a * ics + b)));
    }
  }
  return tasks;
}

std::vector<double> fo_descent(
    std::vector<double> theta, const SolStudyConfig& cfg,
    const std::function<SolGradient(std::span<const double>)>& grad) {
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const SolGradient g = grad(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.lr * g.grad[i];
  }
  return theta;
}

}  // namespace

SolReport run_sol_study(const SolStudyConfig& study) {
  study.validate();
  SolStudyConfig cfg = study;
  double nu_max = 0.0;
  for (double v : cfg.train_nu) nu_max = std::max(nu_max, v);
  for (double v : cfg.test_nu) nu_max = std::max(nu_max, v);
  cfg.base.dt = cfg.cfl * cfg.base.fine_dx() * cfg.base.fine_dx() / nu_max;
  cfg.base.nu = nu_max;
  cfg.base.validate();

  const std::vector<SolTask> train = build_tasks(cfg, cfg.train_nu, cfg.train_ics, 10000);
  std::vector<std::vector<SolTask>> test;
  for (std::size_t a = 0; a < cfg.test_nu.size(); ++a) {
    test.push_back(build_tasks(cfg, {cfg.test_nu[a]}, cfg.test_ics, 20000 + 100 * a));
  }

  const ModelSpec spec = corrector_spec(cfg.base.coarse_n, cfg.hidden);
  const std::vector<double> theta0 = init_corrector(spec, derive_seed(cfg.seed, 1));
  const double norm = static_cast<double>(sol_term_count(train));

  auto evaluate = [&](const std::string& name, const Corrector& c,
                      std::span<const double> theta) {
    SolVariant v;
    v.name = name;
    for (const auto& tasks : test) v.test_mae.push_back(rollout_mae(c, tasks));
    double sum = 0.0;
    for (double m : v.test_mae) sum += m;
    v.mean_mae = sum / static_cast<double>(v.test_mae.size());
    v.train_loss = sol_loss(network_corrector(spec, theta), train) / norm;
    return v;
  };

  SolReport report;
  report.test_nu = cfg.test_nu;
  report.variants.push_back(evaluate("SRC", zero_corrector(), theta0));

  const auto theta_non = fo_descent(theta0, cfg, [&](std::span<const double> th) {
    return non_loss_grad(spec, th, train);
  });
  report.variants.push_back(
      evaluate("NON", network_corrector(spec, theta_non), theta_non));

  const Objective<double> f([&](std::span<const double> th) {
    return sol_loss(network_corrector(spec, th), train) / norm;
  });
  const auto theta_zo = zo_sol_train(f, theta0, cfg);
  SolVariant zo = evaluate("ZO-SOL", network_corrector(spec, theta_zo), theta_zo);
  zo.queries = f.queries();
  report.variants.push_back(std::move(zo));

  const auto theta_fo = fo_descent(theta0, cfg, [&](std::span<const double> th) {
    return sol_loss_grad(spec, th, train);
  });
  report.variants.push_back(
      evaluate("FO-SOL", network_corrector(spec, theta_fo), theta_fo));
  return report;
}

void write_sol_report_csv(std::ostream& out, const SolReport& report) {
  out << "variant,nu,mae,train_loss,queries\n";
  char buf[160];
  for (const SolVariant& v : report.variants) {
    for (std::size_t a = 0; a < v.test_mae.size(); ++a) {
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%llu\n", v.name.c_str(),
                    report.test_nu[a], v.test_mae[a], v.train_loss,
                    static_cast<unsigned long long>(v.queries));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%s,mean,%.9g,%.9g,%llu\n", v.name.c_str(), v.mean_mae,
                  v.train_loss, static_cast<unsigned long long>(v.queries));
    out << buf;
  }
}

}  // namespace zoforge
