#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>

#include "geom/csv.hpp"
#include "geom/errors.hpp"

namespace geom::cli {

namespace {

struct Field {
  std::string key;  // section.name
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key " + key + ": '" + value + "' is not " + want);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != end) bad_value(key, v, "an integer in range");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != end) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

template <typename T>
Field integer(std::string key, T& f) {
  return {key, [&f] { return std::to_string(f); }, [&f, key](const std::string& v) { f = parse_integer<T>(key, v); }};
}

Field real(std::string key, double& f) {
  return {key, [&f] { return csv::format_double(f); }, [&f, key](const std::string& v) { f = parse_real(key, v); }};
}

Field boolean(std::string key, bool& f) {
  return {key, [&f] { return std::string(f ? "true" : "false"); },
          [&f, key](const std::string& v) { f = parse_bool(key, v); }};
}

Field text(std::string key, std::string& f) {
  return {key, [&f] { return f; }, [&f](const std::string& v) { f = v; }};
}

Field path(std::string key, std::filesystem::path& f) {
  return {key, [&f] { return f.string(); }, [&f](const std::string& v) { f = v; }};
}

template <typename E, typename Parse, typename Name>
Field choice(std::string key, E& f, Parse parse, Name name) {
  return {key, [&f, name] { return std::string(name(f)); }, [&f, parse](const std::string& v) { f = parse(v); }};
}

DataSource parse_source(const std::string& v) {
  if (v == "sbm") return DataSource::kSbm;
  if (v == "bundle") return DataSource::kBundle;
  throw ConfigError("unknown data source '" + v + "' (sbm, bundle)");
}

const char* source_name(DataSource s) { return s == DataSource::kSbm ? "sbm" : "bundle"; }

std::vector<Field> fields(RunConfig& c) {
  return {
      integer("run.seed", c.seed),
      integer("run.threads", c.threads),
      path("run.out", c.out),

      choice("data.source", c.source, parse_source, source_name),
      path("data.bundle", c.bundle),
      integer("data.num_classes", c.bundle_classes),

      integer("sbm.nodes_per_class", c.sbm.nodes_per_class),
      integer("sbm.num_classes", c.sbm.num_classes),
      real("sbm.p_in", c.sbm.p_in),
      real("sbm.p_out", c.sbm.p_out),
      integer("sbm.feature_dim", c.sbm.feature_dim),
      real("sbm.feature_noise", c.sbm.feature_noise),

      integer("buffer.num_experts", c.buffer.num_experts),
      choice("buffer.arch", c.buffer.arch, parse_arch, arch_name),
      integer("buffer.hidden_dim", c.buffer.hidden_dim),
      integer("buffer.epochs", c.buffer.epochs),
      real("buffer.lr", c.buffer.lr),
      real("buffer.momentum", c.buffer.momentum),
      choice("buffer.pacing", c.buffer.pacing.kind, parse_pacing_kind, pacing_kind_name),
      real("buffer.lambda0", c.buffer.pacing.lambda0),
      integer("buffer.zeta", c.buffer.pacing.zeta),
      integer("buffer.extra_epochs", c.buffer.pacing.extra_epochs),
      integer("buffer.snapshot_interval", c.buffer.snapshot_interval),
      integer("buffer.patience", c.buffer.patience),
      path("buffer.dir", c.buffer_dir),

      real("condense.ratio", c.ratio),
      real("condense.init_lr", c.init_lr),
      path("condense.trajectories", c.trajectories),
      integer("condense.p", c.matching.p),
      integer("condense.q", c.matching.q),
      integer("condense.q_cap", c.matching.q_cap),
      integer("condense.U0", c.matching.U0),
      integer("condense.U_max", c.matching.U_max),
      integer("condense.iterations", c.matching.iterations),
      real("condense.alpha", c.matching.alpha),
      real("condense.lr_feat", c.matching.lr_feat),
      real("condense.lr_y", c.matching.lr_y),
      real("condense.lr_lr", c.matching.lr_lr),
      real("condense.momentum", c.matching.momentum),
      choice("condense.window_mode", c.matching.window_mode, parse_window_mode, window_mode_name),
      boolean("condense.literal_window", c.matching.literal_window),
      boolean("condense.soft_inner", c.matching.soft_inner),

      choice("eval.arch", c.eval_arch, parse_arch, arch_name),
      integer("eval.hidden_dim", c.eval_hidden),
      integer("eval.train_epochs", c.eval.train_epochs),
      integer("eval.eval_interval", c.eval.eval_interval),
      real("eval.lr", c.eval.lr),
      boolean("eval.use_inner_lr", c.eval.use_inner_lr),
      integer("eval.repeats", c.eval.repeats),
      path("eval.condensed", c.condensed),
      boolean("eval.full", c.eval_full),

      choice("coreset.method", c.coreset_method, parse_coreset_method, coreset_method_name),
      real("coreset.ratio", c.coreset_ratio),

      text("analyze.toy", c.toy),
      integer("analyze.stages", c.stages),
      integer("analyze.p", c.analyze_p),
      integer("analyze.q", c.analyze_q),
      real("analyze.eps0", c.eps0),
      real("analyze.tolerance", c.tolerance),
      real("analyze.eta", c.analyze_eta),
      path("analyze.trajectory", c.analyze_trajectory),
  };
}

void require_exists(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

}  // namespace

void RunConfig::resolve() {
  sbm.seed = seed;
  buffer.seed = seed;
  matching.seed = seed;
  eval.seed = seed;
  if (buffer_dir.empty()) buffer_dir = out / "buffer";
  if (trajectories.empty()) trajectories = buffer_dir;
  if (condensed.empty()) condensed = out / "condensed";
  if (init_lr == 0.0) init_lr = buffer.lr;
  if (eval_hidden == 0) eval_hidden = buffer.hidden_dim;
  if (coreset_ratio == 0.0) coreset_ratio = ratio;
  if (analyze_trajectory.empty()) analyze_trajectory = trajectories / "expert_000.traj";
  if (threads == 0) threads = WorkerPool::hardware();
}

void RunConfig::validate(const std::string& command) const {
  const bool needs_graph = command != "analyze";
  if (needs_graph) {
    if (source == DataSource::kBundle) {
      if (bundle.empty()) throw ConfigError("data.source = bundle needs data.bundle");
      require_exists(bundle, "dataset bundle");
    } else {
      sbm.validate();
    }
  }
  if (command == "buffer") buffer.validate();
  if (command == "condense") {
    matching.validate();
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("condense.ratio must be in (0, 1)");
    if (!(init_lr > 0.0)) throw ConfigError("condense.init_lr must be > 0");
    require_exists(trajectories, "trajectory directory");
  }
  if (command == "eval" || command == "coreset") {
    eval.validate();
    if (command == "eval") require_exists(condensed, "condensed set");
    if (command == "coreset" && !(coreset_ratio > 0.0 && coreset_ratio < 1.0)) {
      throw ConfigError("coreset.ratio must be in (0, 1)");
    }
  }
  if (command == "analyze") {
    if (toy != "none" && toy != "linreg") throw ConfigError("unknown analyze.toy '" + toy + "' (none, linreg)");
    if (stages < 1 || analyze_p < 1 || analyze_q < 0) {
      throw ConfigError("analyze needs stages >= 1, p >= 1, q >= 0");
    }
    if (!(tolerance >= 0.0)) throw ConfigError("analyze.tolerance must be >= 0");
    if (toy == "none") {
      require_exists(analyze_trajectory, "trajectory");
      require_exists(condensed, "condensed set");
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const Overrides& overrides) {
  RunConfig cfg;
  auto table = fields(cfg);
  std::map<std::string, Field*> by_key;
  for (auto& f : table) by_key.emplace(f.key, &f);

  const auto apply = [&](const std::string& key, const std::string& value, const std::string& origin) {
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "' in " + origin);
    it->second->set(value);
  };

  if (!file.empty()) {
    require_exists(file, "config file");
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(file.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("cannot parse config " + file.string() + ": " + e.message() + " (line " +
                        std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError("config key '" + section + "' in " + file.string() + " is outside a section");
      for (const auto& [name, value] : body) apply(section + "." + name, value.data(), file.string());
    }
  }
  for (const auto& [key, value] : overrides) apply(key, value, "command-line flags");
  cfg.resolve();
  return cfg;
}

std::string to_ini(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields(copy)) {
    const auto dot = f.key.find('.');
    const auto sec = f.key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    out << f.key.substr(dot + 1) << " = " << f.get() << '\n';
  }
  return out.str();
}

std::vector<std::string> known_keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& f : fields(c)) out.push_back(f.key);
  return out;
}

}  // namespace geom::cli
