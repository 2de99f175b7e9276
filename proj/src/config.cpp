#include "zoforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "zoforge/presets.hpp"

namespace zoforge {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw ConfigError(key + ": " + why);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad(key, "expected a non-negative integer, got '" + v + "'");
  }
  return x;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad(key, "expected a number, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class Seq, class F>
std::string join(const Seq& seq, F&& f) {
  std::string s;
  for (const auto& v : seq) {
    if (!s.empty()) s += ",";
    s += f(v);
  }
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class M>
Field size_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, key](RunConfig& c, const std::string& v) {
            member(c) = static_cast<std::size_t>(to_u64(key, v));
          }};
}

template <class M>
Field double_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return fmt(member(c)); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = to_double(key, v); }};
}

template <class M>
Field string_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return member(c); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

template <class M>
Field bool_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return member(c) ? "true" : "false"; },
          [member, key](RunConfig& c, const std::string& v) { member(c) = to_bool(key, v); }};
}

template <class M>
Field doubles_field(std::string key, M member) {
  return {key, [member](const RunConfig& c) { return join(member(c), fmt); },
          [member, key](RunConfig& c, const std::string& v) {
            auto& out = member(c);
            out.clear();
            for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
          }};
}

template <class M>
Field sizes_field(std::string key, M member) {
  return {key,
          [member](const RunConfig& c) {
            return join(member(c), [](auto x) { return std::to_string(x); });
          },
          [member, key](RunConfig& c, const std::string& v) {
            auto& out = member(c);
            out.clear();
            for (const auto& item : split_list(v)) {
              out.push_back(static_cast<std::decay_t<decltype(out[0])>>(to_u64(key, item)));
            }
          }};
}

// Accessors usable on both const and non-const configs.
#define ZF_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      string_field("run.command", ZF_MEMBER(command)),
      sizes_field("run.seeds", ZF_MEMBER(seeds)),
      string_field("run.out", ZF_MEMBER(out)),

      string_field("data.kind", ZF_MEMBER(data.kind)),
      size_field("data.n", ZF_MEMBER(data.n)),
      size_field("data.dim", ZF_MEMBER(data.dim)),
      size_field("data.classes", ZF_MEMBER(data.classes)),
      double_field("data.separation", ZF_MEMBER(data.separation)),
      double_field("data.noise", ZF_MEMBER(data.noise)),
      size_field("data.image_size", ZF_MEMBER(data.image_size)),
      string_field("data.path", ZF_MEMBER(data.path)),
      double_field("data.train_fraction", ZF_MEMBER(data.train_fraction)),

      string_field("model.kind", ZF_MEMBER(model.kind)),
      size_field("model.size", ZF_MEMBER(model.size)),

      {"train.mode", [](const RunConfig& c) { return to_string(c.train.mode); },
       [](RunConfig& c, const std::string& v) {
         try {
           c.train.mode = parse_train_mode(v);
         } catch (const ConfigError& e) {
           bad("train.mode", e.what());
         }
       }},
      size_field("train.epochs", ZF_MEMBER(train.epochs)),
      size_field("train.batch_size", ZF_MEMBER(train.batch_size)),
      double_field("train.lr0", ZF_MEMBER(train.lr0)),
      double_field("train.momentum", ZF_MEMBER(train.momentum)),
      double_field("train.weight_decay", ZF_MEMBER(train.weight_decay)),
      double_field("train.mu", ZF_MEMBER(train.mu)),
      double_field("train.sparsity", ZF_MEMBER(train.sparsity)),
      size_field("train.k_sparse", ZF_MEMBER(train.k_sparse)),
      size_field("train.workers", ZF_MEMBER(train.workers)),
      size_field("train.grasp_q", ZF_MEMBER(train.grasp_q)),
      size_field("train.rge_q", ZF_MEMBER(train.rge_q)),
      bool_field("train.feature_reuse", ZF_MEMBER(train.feature_reuse)),

      sizes_field("bench.workers", ZF_MEMBER(bench.workers)),
      size_field("bench.repeats", ZF_MEMBER(bench.repeats)),

      size_field("sol.coarse_n", ZF_MEMBER(sol.base.coarse_n)),
      size_field("sol.fine_factor", ZF_MEMBER(sol.base.fine_factor)),
      size_field("sol.steps", ZF_MEMBER(sol.base.steps)),
      size_field("sol.unroll", ZF_MEMBER(sol.base.unroll)),
      double_field("sol.length", ZF_MEMBER(sol.base.length)),
      doubles_field("sol.train_nu", ZF_MEMBER(sol.train_nu)),
      doubles_field("sol.test_nu", ZF_MEMBER(sol.test_nu)),
      size_field("sol.train_ics", ZF_MEMBER(sol.train_ics)),
      size_field("sol.test_ics", ZF_MEMBER(sol.test_ics)),
      double_field("sol.cfl", ZF_MEMBER(sol.cfl)),
      size_field("sol.hidden", ZF_MEMBER(sol.hidden)),
      size_field("sol.iterations", ZF_MEMBER(sol.iterations)),
      double_field("sol.lr", ZF_MEMBER(sol.lr)),
      double_field("sol.zo_lr", ZF_MEMBER(sol.zo_lr)),
      double_field("sol.mu", ZF_MEMBER(sol.mu)),
      double_field("sol.sparsity", ZF_MEMBER(sol.sparsity)),
  };
  return table;
}

#undef ZF_MEMBER

// Re-raises a ConfigError from a nested validate() under a section prefix.
template <class F>
void with_prefix(const std::string& section, F&& f) {
  try {
    f();
  } catch (const StabilityError& e) {
    throw ConfigError(section + "." + "dt: " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(section + "." + e.what());
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(cfg, trim(value));
      if (key == "run.seeds" && !cfg.seeds.empty()) cfg.train.seed = cfg.seeds.front();
      return;
    }
  }
  throw ConfigError(key + ": unknown configuration key");
}

RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(number) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) {
        throw ConfigError("line " + std::to_string(number) + ": key '" + key +
                          "' outside any [section]");
      }
      key = section + "." + key;
    }
    apply_setting(cfg, key, line.substr(eq + 1));
  }
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("run.config: cannot open '" + path + "'");
  return parse_config(in);
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out, section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  static const std::vector<std::string> commands{"train", "prune", "estimate", "bench", "sol"};
  if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
    bad("run.command", "expected train, prune, estimate, bench or sol, got '" + command + "'");
  }
  if (seeds.empty()) bad("run.seeds", "at least one seed is required");
  if (out.empty()) bad("run.out", "must not be empty");

  static const std::vector<std::string> kinds{"blobs", "moons", "images", "raw"};
  if (std::find(kinds.begin(), kinds.end(), data.kind) == kinds.end()) {
    bad("data.kind", "expected blobs, moons, images or raw, got '" + data.kind + "'");
  }
  if (data.n < 2) bad("data.n", "must be >= 2");
  if (data.dim < 1) bad("data.dim", "must be >= 1");
  if (data.classes < 2) bad("data.classes", "must be >= 2");
  if (data.kind == "images" && data.classes > 4) bad("data.classes", "images support 2..4");
  if (data.kind == "images" && data.image_size < 3) bad("data.image_size", "must be >= 3");
  if (!(data.noise >= 0.0)) bad("data.noise", "must be >= 0");
  if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0)) {
    bad("data.train_fraction", "must lie in (0, 1]");
  }
  if (data.kind == "raw" && !std::filesystem::is_regular_file(data.path)) {
    bad("data.path", "file '" + data.path + "' does not exist");
  }
  if (model.size < 1) bad("model.size", "must be >= 1");
  with_prefix("train", [&] { train.validate(); });
  if (bench.workers.empty()) bad("bench.workers", "at least one worker count is required");
  for (std::size_t w : bench.workers) {
    if (w < 1) bad("bench.workers", "worker counts must be >= 1");
  }
  if (bench.repeats < 1) bad("bench.repeats", "must be >= 1");
  with_prefix("sol", [&] { sol.validate(); });
  if (sol.base.coarse_n < 2) bad("sol.coarse_n", "must be >= 2");
  if (sol.base.fine_factor < 1) bad("sol.fine_factor", "must be >= 1");
  if (sol.base.unroll < 1 || sol.base.unroll > sol.base.steps) {
    bad("sol.unroll", "must be in [1, steps]");
  }
}

TrainData<double> load_data(const DataConfig& cfg, std::uint64_t seed) {
  Dataset<double> all;
  if (cfg.kind == "blobs") {
    all = gaussian_blobs(cfg.n, cfg.dim, cfg.classes, cfg.separation, seed);
  } else if (cfg.kind == "moons") {
    all = two_moons(cfg.n, cfg.noise, seed);
  } else if (cfg.kind == "images") {
    all = tiny_images(cfg.n, cfg.image_size, cfg.classes, cfg.noise, seed);
  } else if (cfg.kind == "raw") {
    all = load_raw_images(cfg.path);
  } else {
    bad("data.kind", "unknown dataset '" + cfg.kind + "'");
  }
  Split<double> s = split(all, cfg.train_fraction, derive_seed(seed, 1));
  standardize(s.train, s.test);
  return {std::move(s.train), std::move(s.test)};
}

ModelSpec load_model(const ModelConfig& cfg, const Dataset<double>& data) {
  return build_model(cfg.kind, data.sample_shape, data.classes, cfg.size);
}

}  // namespace zoforge
