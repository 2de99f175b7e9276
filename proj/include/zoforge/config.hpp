#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "zoforge/data.hpp"
#include "zoforge/model.hpp"
#include "zoforge/sol.hpp"
#include "zoforge/trainer.hpp"

namespace zoforge {

struct DataConfig {
  std::string kind = "blobs";  // blobs | moons | images | raw
  std::size_t n = 400;
  std::size_t dim = 2;         // blobs
  std::size_t classes = 2;     // blobs, images
  double separation = 3.0;     // blobs
  double noise = 0.15;         // moons, images
  std::size_t image_size = 8;  // images
  std::string path;            // raw
  double train_fraction = 0.75;
  bool operator==(const DataConfig&) const = default;
};

struct ModelConfig {
  std::string kind = "mlp";  // see build_model
  std::size_t size = 32;
  bool operator==(const ModelConfig&) const = default;
};

struct BenchConfig {
  std::vector<std::size_t> workers{1, 2, 4};
  std::size_t repeats = 5;
  bool operator==(const BenchConfig&) const = default;
};

// Everything one CLI invocation needs. train.seed is not a key of its own:
// each run uses one entry of `seeds`.
struct RunConfig {
  std::string command;  // train | prune | estimate | bench | sol
  std::vector<std::uint64_t> seeds{1};
  std::string out = "out";
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  BenchConfig bench;
  SolStudyConfig sol;

  // Throws ConfigError whose message starts with "section.key: ".
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Flat "key = value" lines under [section] headers. '#' starts a comment.
// Keys not under a header must be written as section.key. Unknown keys,
// malformed lines and unparsable values throw ConfigError naming the key
// or line.
RunConfig parse_config(std::istream& in);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Every key in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

// Sets one "section.key" from its text form.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// All recognized "section.key" names, in serialization order.
std::vector<std::string> config_keys();

// Builds the configured dataset for one seed, standardized and split.
TrainData<double> load_data(const DataConfig& cfg, std::uint64_t seed);

ModelSpec load_model(const ModelConfig& cfg, const Dataset<double>& data);

}  // namespace zoforge
