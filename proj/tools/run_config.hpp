#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "geom/buffer.hpp"
#include "geom/condenser.hpp"
#include "geom/evaluator.hpp"
#include "geom/graph.hpp"

namespace geom::cli {

enum class DataSource { kSbm, kBundle };

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: available parallelism
  std::filesystem::path out = "out";

  DataSource source = DataSource::kSbm;
  std::filesystem::path bundle;
  int bundle_classes = 0;  // 0: infer from labels
  SbmConfig sbm;

  BufferConfig buffer;
  std::filesystem::path buffer_dir;  // empty: <out>/buffer

  MatchingConfig matching;
  double ratio = 0.05;
  double init_lr = 0.0;  // initial eta; 0: buffer.lr
  std::filesystem::path trajectories;  // empty: buffer_dir

  EvalProtocol eval;
  Arch eval_arch = Arch::kGcn2;
  std::size_t eval_hidden = 0;  // 0: buffer.hidden_dim
  std::filesystem::path condensed;  // empty: <out>/condensed
  bool eval_full = true;

  CoresetMethod coreset_method = CoresetMethod::kRandom;
  double coreset_ratio = 0.0;  // 0: matching ratio

  std::string toy = "none";  // none | linreg
  int stages = 5;
  int analyze_p = 4;
  int analyze_q = 3;
  double eps0 = 0.0;  // every coordinate of the initial offset
  double tolerance = 1e-9;
  double analyze_eta = 0.0;  // 0: condensed set's eta
  std::filesystem::path analyze_trajectory;  // empty: <trajectories>/expert_000.traj

  // Fill every "inherit" default with a concrete value.
  void resolve();
  // Module-level checks plus path existence for the given subcommand.
  void validate(const std::string& command) const;
};

// key "section.name" -> value, as given on the command line.
using Overrides = std::map<std::string, std::string>;

// Defaults, then the INI file (when non-empty), then overrides. Unknown keys
// and unparsable values raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& file, const Overrides& overrides);

// Every key with its resolved value; loading this text reproduces the config.
std::string to_ini(const RunConfig& cfg);

// Keys the config accepts, "section.name".
std::vector<std::string> known_keys();

}  // namespace geom::cli
