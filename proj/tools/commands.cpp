#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zoforge/fo_oracle.hpp"
#include "zoforge/objective.hpp"
#include "zoforge/parallel.hpp"
#include "zoforge/pruning.hpp"
#include "zoforge/sol.hpp"
#include "zoforge/stats.hpp"
#include "zoforge/trainer.hpp"

namespace zoforge::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

// Child streams of a run seed that the trainer does not already use.
constexpr std::uint64_t kDataStream = 700;
constexpr std::uint64_t kRandomScoreStream = 4000;
constexpr std::uint64_t kRandomMaskStream = 4001;

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("run.out: cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const Json& j) { open_out(path) << j.dump(2) << '\n'; }

void write_text(const fs::path& path, const std::string& text) { open_out(path) << text; }

std::string g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Setup {
  TrainData<double> data;
  ModelSpec spec;
};

Setup setup(const RunConfig& cfg, std::uint64_t seed) {
  Setup s{load_data(cfg.data, derive_seed(seed, kDataStream)), {}};
  s.spec = load_model(cfg.model, s.data.train);
  return s;
}

TrainConfig train_config(const RunConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.workers = capped_workers(t.workers);
  return t;
}

bool backprop_supported(const ModelSpec& spec) {
  try {
    require_backprop_support(spec);
    return true;
  } catch (const UnsupportedLayerError&) {
    return false;
  }
}

void write_mask_file(const fs::path& path, const CoordinateSet& mask) {
  auto out = open_out(path);
  write_mask(out, mask);
}

void write_lpr_file(const fs::path& path, const LprTable& lpr) {
  auto out = open_out(path);
  write_lpr(out, lpr);
}

// ---- train ----------------------------------------------------------------

Json train_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
               std::ostream& log) {
  const Setup s = setup(cfg, seed);
  const TrainData<float> data{cast_dataset<float>(s.data.train),
                              cast_dataset<float>(s.data.eval)};
  const TrainConfig tc = train_config(cfg, seed);
  const auto t0 = Clock::now();
  const TrainResult<float> r = train<float>(s.spec, data, tc);
  const double wall = seconds_since(t0);

  {
    auto out = open_out(dir / "metrics.csv");
    write_metrics_csv(out, r.metrics);
  }
  save_checkpoint((dir / "checkpoint.bin").string(), r.theta, seed);
  if (r.initial_mask.dim() > 0) {
    write_mask_file(dir / "masks" / "initial.txt", r.initial_mask);
  }
  if (!r.lpr.empty()) write_lpr_file(dir / "masks" / "lpr.txt", r.lpr);

  Json j;
  j["command"] = "train";
  j["mode"] = to_string(tc.mode);
  j["seed"] = seed;
  j["params"] = r.theta.size();
  j["epochs"] = tc.epochs;
  j["final_accuracy"] = r.metrics.final_accuracy();
  j["total_queries"] = r.metrics.total_queries();
  j["grasp_queries"] = r.grasp_queries;
  j["grasp_refreshes"] = r.grasp_refreshes;
  j["wall_seconds"] = wall;
  write_json(dir / "summary.json", j);
  log << "train seed " << seed << ": accuracy " << r.metrics.final_accuracy() << ", queries "
      << r.metrics.total_queries() << ", " << wall << " s\n";
  return j;
}

// ---- prune ----------------------------------------------------------------

Json prune_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
               std::ostream& log) {
  const Setup s = setup(cfg, seed);
  const TrainConfig tc = train_config(cfg, seed);
  const ParamVector<double> theta =
      init_params<double>(s.spec, derive_seed(seed, seed_stream::kInitStream));
  const std::size_t d = theta.size();
  const Batch<double> batch = grasp_batch(s.data.train, tc.batch_size, seed, 0);
  const auto f = make_loss_objective(s.spec, batch);
  const PruneScores zo = zo_grasp_scores<double>(
      f, theta.values(), tc.grasp_q, tc.mu, derive_seed(seed, seed_stream::kGraspEstimateBase));

  std::vector<double> random_scores(d);
  {
    std::mt19937_64 rng(derive_seed(seed, kRandomScoreStream));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : random_scores) v = normal(rng);
  }

  std::map<std::string, CoordinateSet> masks;
  masks.emplace("zo_grasp", prune_mask_global(zo.values, tc.sparsity));
  masks.emplace("random", random_mask(d, tc.sparsity, derive_seed(seed, kRandomMaskStream)));
  masks.emplace("magnitude", magnitude_mask<double>(theta.values(), tc.sparsity));

  const bool have_fo = backprop_supported(s.spec);
  std::vector<double> fo_scores;
  if (have_fo) {
    fo_scores = grasp_scores_fo(s.spec, theta.values(), batch).values;
    masks.emplace("fo_grasp", prune_mask_global(fo_scores, tc.sparsity));
  }

  {
    auto out = open_out(dir / "scores.csv");
    out << "index,layer,fo,zo,random\n";
    for (std::size_t i = 0; i < d; ++i) {
      out << i << ',' << theta.layer_of(i) << ',' << (have_fo ? g17(fo_scores[i]) : "") << ','
          << g17(zo.values[i]) << ',' << g17(random_scores[i]) << '\n';
    }
  }
  Json sizes;
  for (const auto& [name, mask] : masks) {
    write_mask_file(dir / "masks" / (name + ".txt"), mask);
    write_lpr_file(dir / "lpr" / (name + ".txt"), lpr_from_mask(mask, theta.segments()));
    sizes[name] = mask.size();
  }

  Json j;
  j["command"] = "prune";
  j["seed"] = seed;
  j["params"] = d;
  j["sparsity"] = tc.sparsity;
  j["grasp_q"] = tc.grasp_q;
  j["zo_queries"] = zo.queries;
  j["mask_sizes"] = sizes;
  if (have_fo) {
    j["spearman_zo_fo"] = spearman(zo.values, fo_scores);
    j["spearman_random_fo"] = spearman(random_scores, fo_scores);
  } else {
    j["spearman_zo_fo"] = nullptr;
    j["spearman_random_fo"] = nullptr;
  }
  write_json(dir / "spearman.json", j);
  log << "prune seed " << seed << ": " << zo.queries << " queries";
  if (have_fo) log << ", spearman(zo, fo) " << j["spearman_zo_fo"].get<double>();
  log << '\n';
  return j;
}

// ---- estimate -------------------------------------------------------------

Json estimate_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
                  std::ostream& log) {
  const Setup s = setup(cfg, seed);
  const TrainConfig tc = train_config(cfg, seed);
  const ParamVector<double> theta =
      init_params<double>(s.spec, derive_seed(seed, seed_stream::kInitStream));
  const std::size_t d = theta.size();
  const Batch<double> batch = grasp_batch(s.data.train, tc.batch_size, seed, 0);
  const auto f = make_loss_objective(s.spec, batch);

  const bool have_bp = backprop_supported(s.spec);
  const std::vector<double> oracle = have_bp ? backprop_grad<double>(s.spec, theta, batch)
                                             : central_fd_grad(f, theta.values(), 1e-5);
  const auto c = cge<double>(f, theta.values(), tc.mu);
  const auto r = rge<double>(f, theta.values(), d, tc.mu,
                             derive_seed(seed, seed_stream::kRgeBase));

  double cge_err = 0.0, rge_err = 0.0;
  {
    auto out = open_out(dir / "estimate.csv");
    out << "index,oracle,cge,rge,cge_abs_err,rge_abs_err\n";
    for (std::size_t i = 0; i < d; ++i) {
      const double ec = std::abs(c.grad[i] - oracle[i]), er = std::abs(r.grad[i] - oracle[i]);
      cge_err += ec;
      rge_err += er;
      out << i << ',' << g17(oracle[i]) << ',' << g17(c.grad[i]) << ',' << g17(r.grad[i]) << ','
          << g17(ec) << ',' << g17(er) << '\n';
    }
  }
  Json j;
  j["command"] = "estimate";
  j["seed"] = seed;
  j["params"] = d;
  j["mu"] = tc.mu;
  j["oracle"] = have_bp ? "backprop" : "central_fd";
  j["cge_queries"] = c.queries;
  j["rge_queries"] = r.queries;
  j["cge_mean_abs_err"] = cge_err / static_cast<double>(d);
  j["rge_mean_abs_err"] = rge_err / static_cast<double>(d);
  write_json(dir / "estimate.json", j);
  log << "estimate seed " << seed << ": mean |err| cge " << j["cge_mean_abs_err"].get<double>()
      << ", rge " << j["rge_mean_abs_err"].get<double>() << '\n';
  return j;
}

// ---- bench ----------------------------------------------------------------

struct BenchRow {
  std::string estimator;
  std::size_t workers = 1;
  bool reuse = true;
  std::uint64_t queries = 0;
  StageTimings stages;  // medians over repeats
  double wall = 0.0;
};

Json bench_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
               std::ostream& log) {
  const Setup s = setup(cfg, seed);
  const TrainConfig tc = train_config(cfg, seed);
  const Batch<float> batch =
      grasp_batch(cast_dataset<float>(s.data.train), tc.batch_size, seed, 0);
  const ParamVector<float> theta =
      init_params<float>(s.spec, derive_seed(seed, seed_stream::kInitStream));
  const std::size_t d = theta.size();
  const CoordinateSet all = CoordinateSet::full(d);

  auto measure = [&](EstimatorKind kind, std::size_t W, bool reuse) {
    BenchRow row{kind == EstimatorKind::kRge ? "rge" : "cge", W, reuse, 0, {}, 0.0};
    std::vector<double> dv, wp, mi, ao, wall;
    for (std::size_t k = 0; k < cfg.bench.repeats; ++k) {
      const std::variant<std::size_t, CoordinateSet> arg =
          kind == EstimatorKind::kRge ? std::variant<std::size_t, CoordinateSet>(d)
                                      : std::variant<std::size_t, CoordinateSet>(all);
      const BenchResult b = bench_stages<float>(kind, s.spec, theta.values(), batch, tc.mu, arg,
                                                W, reuse, derive_seed(seed, k));
      row.queries = b.queries;
      dv.push_back(b.stages.dv);
      wp.push_back(b.stages.wp);
      mi.push_back(b.stages.mi);
      ao.push_back(b.stages.ao);
      wall.push_back(b.wall_seconds);
    }
    row.stages = {median(dv), median(wp), median(mi), median(ao)};
    row.wall = median(wall);
    return row;
  };

  std::vector<BenchRow> rows;
  rows.push_back(measure(EstimatorKind::kRge, 1, false));
  rows.push_back(measure(EstimatorKind::kCge, 1, false));
  std::vector<std::size_t> counts;
  for (std::size_t w : cfg.bench.workers) counts.push_back(capped_workers(w));
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  for (std::size_t w : counts) rows.push_back(measure(EstimatorKind::kCge, w, true));

  {
    auto out = open_out(dir / "bench.csv");
    out << "estimator,workers,feature_reuse,queries,dv_s,wp_s,mi_s,ao_s,total_s,wall_s\n";
    for (const BenchRow& r : rows) {
      out << r.estimator << ',' << r.workers << ',' << (r.reuse ? 1 : 0) << ',' << r.queries
          << ',' << g17(r.stages.dv) << ',' << g17(r.stages.wp) << ',' << g17(r.stages.mi)
          << ',' << g17(r.stages.ao) << ',' << g17(r.stages.total()) << ',' << g17(r.wall)
          << '\n';
    }
  }
  char line[160];
  std::snprintf(line, sizeof line, "%-9s %7s %5s %8s %10s %10s %10s %10s %10s\n", "estimator",
                "workers", "reuse", "queries", "DV (s)", "WP (s)", "MI (s)", "AO (s)", "wall (s)");
  log << "bench seed " << seed << ", d = " << d << '\n' << line;
  Json table = Json::array();
  for (const BenchRow& r : rows) {
    std::snprintf(line, sizeof line, "%-9s %7zu %5s %8llu %10.3g %10.3g %10.3g %10.3g %10.3g\n",
                  r.estimator.c_str(), r.workers, r.reuse ? "yes" : "no",
                  static_cast<unsigned long long>(r.queries), r.stages.dv, r.stages.wp,
                  r.stages.mi, r.stages.ao, r.wall);
    log << line;
    table.push_back({{"estimator", r.estimator},
                     {"workers", r.workers},
                     {"feature_reuse", r.reuse},
                     {"queries", r.queries},
                     {"wall_seconds", r.wall}});
  }
  Json j;
  j["command"] = "bench";
  j["seed"] = seed;
  j["params"] = d;
  j["rows"] = table;
  return j;
}

// ---- sol ------------------------------------------------------------------

Json sol_one(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir, std::ostream& log) {
  SolStudyConfig sc = cfg.sol;
  sc.seed = seed;
  sc.workers = capped_workers(cfg.train.workers);
  const SolReport report = run_sol_study(sc);
  {
    auto out = open_out(dir / "sol_report.csv");
    write_sol_report_csv(out, report);
  }
  Json variants;
  for (const SolVariant& v : report.variants) {
    variants[v.name] = {{"mean_mae", v.mean_mae},
                        {"test_mae", v.test_mae},
                        {"train_loss", v.train_loss},
                        {"queries", v.queries}};
    log << "sol seed " << seed << ": " << v.name << " mean MAE " << v.mean_mae << '\n';
  }
  Json j;
  j["command"] = "sol";
  j["seed"] = seed;
  j["test_nu"] = report.test_nu;
  j["variants"] = variants;
  write_json(dir / "sol_summary.json", j);
  return j;
}

}  // namespace

std::size_t capped_workers(std::size_t requested) {
  const char* env = std::getenv("ZOFORGE_THREADS");
  if (!env) return requested;
  char* end = nullptr;
  const unsigned long long cap = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0' || cap == 0) return requested;
  return std::min<std::size_t>(requested, static_cast<std::size_t>(cap));
}

std::string seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.seeds.size() == 1) return cfg.out;
  return (fs::path(cfg.out) / ("seed_" + std::to_string(seed))).string();
}

void run_command(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  using Runner = Json (*)(const RunConfig&, std::uint64_t, const fs::path&, std::ostream&);
  static const std::map<std::string, Runner> runners{{"train", train_one},
                                                      {"prune", prune_one},
                                                      {"estimate", estimate_one},
                                                      {"bench", bench_one},
                                                      {"sol", sol_one}};
  const Runner run = runners.at(cfg.command);
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "config.txt", serialize_config(cfg));

  Json per_seed = Json::array();
  for (std::uint64_t seed : cfg.seeds) {
    per_seed.push_back(run(cfg, seed, seed_dir(cfg, seed), log));
  }
  if (cfg.seeds.size() > 1 && cfg.command == "train") {
    std::vector<double> acc;
    for (const Json& j : per_seed) acc.push_back(j["final_accuracy"].get<double>());
    Json agg;
    agg["command"] = "train";
    agg["seeds"] = cfg.seeds;
    agg["final_accuracy"] = acc;
    agg["median_accuracy"] = median(acc);
    write_json(fs::path(cfg.out) / "summary.json", agg);
  }
  if (cfg.seeds.size() > 1 && cfg.command == "prune" && !per_seed[0]["spearman_zo_fo"].is_null()) {
    std::vector<double> rho;
    for (const Json& j : per_seed) rho.push_back(j["spearman_zo_fo"].get<double>());
    Json agg;
    agg["command"] = "prune";
    agg["seeds"] = cfg.seeds;
    agg["spearman_zo_fo"] = rho;
    agg["mean_spearman_zo_fo"] = mean(rho);
    write_json(fs::path(cfg.out) / "spearman.json", agg);
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zeroth-order training, pruning and estimator toolkit", "zoforge"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, seeds, out, mode;
    std::size_t workers = 0, epochs = 0;
    double mu = 0.0, sparsity = 0.0;
    std::vector<std::string> sets;
  } flags;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "Train a model and write metrics, checkpoint and summary"},
      {"prune", "Score coordinates with FO/ZO-GraSP, random and magnitude rules"},
      {"estimate", "Compare CGE and RGE against the analytic gradient"},
      {"bench", "Per-stage timing of one gradient estimate"},
      {"sol", "Solver-in-the-loop correction study"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "key = value config file");
    sub->add_option("--seed", flags.seeds, "seed or comma-separated seed list");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--workers", flags.workers, "worker threads (capped by ZOFORGE_THREADS)");
    sub->add_option("--mu", flags.mu, "finite-difference step");
    sub->add_option("--sparsity", flags.sparsity, "pruning ratio p");
    sub->add_option("--epochs", flags.epochs, "training epochs");
    sub->add_option("--mode", flags.mode, "deepzero | m1 | m2 | fo | rge");
    sub->add_option("--set", flags.sets, "override any section.key=value")->take_all();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    CLI::App* sub = nullptr;
    for (CLI::App* s : subs) {
      if (s->parsed()) sub = s;
    }
    RunConfig cfg = flags.config.empty() ? RunConfig{} : load_config(flags.config);
    cfg.command = sub->get_name();
    if (sub->count("--seed")) apply_setting(cfg, "run.seeds", flags.seeds);
    if (sub->count("--out")) apply_setting(cfg, "run.out", flags.out);
    if (sub->count("--workers")) apply_setting(cfg, "train.workers", std::to_string(flags.workers));
    if (sub->count("--mu")) apply_setting(cfg, "train.mu", g17(flags.mu));
    if (sub->count("--sparsity")) apply_setting(cfg, "train.sparsity", g17(flags.sparsity));
    if (sub->count("--epochs")) apply_setting(cfg, "train.epochs", std::to_string(flags.epochs));
    if (sub->count("--mode")) apply_setting(cfg, "train.mode", flags.mode);
    for (const std::string& s : flags.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set: expected section.key=value, got '" + s + "'");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    run_command(cfg, out);
    return 0;
  } catch (const std::exception& e) {
    err << "zoforge: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace zoforge::cli
