#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <limits>
#include <ostream>

#include "geom/csv.hpp"
#include "geom/errors.hpp"
#include "run_config.hpp"

namespace geom::cli {

namespace {

namespace fs = std::filesystem;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

GraphDataset load_dataset(const RunConfig& cfg) {
  if (cfg.source == DataSource::kSbm) return generate_sbm(cfg.sbm);
  return load_graph(cfg.bundle, cfg.bundle_classes > 0 ? std::optional<int>(cfg.bundle_classes) : std::nullopt);
}

void write_snapshot(const RunConfig& cfg, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  csv::write_text(dir / ("resolved_" + command + ".ini"), to_ini(cfg));
}

std::vector<fs::path> trajectory_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".traj") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .traj files in " + dir.string());
  return files;
}

ModelSpec eval_spec(const RunConfig& cfg, const GraphDataset& g) {
  return ModelSpec{cfg.eval_arch, g.feature_dim(), cfg.eval_hidden, static_cast<std::size_t>(g.num_classes()), 0};
}

void report(const EvalReport& r, const fs::path& out, const std::string& stem, std::ostream& os) {
  write_report_csv(r, out / (stem + ".csv"));
  write_report_json(r, out / (stem + ".json"));
  os << stem << ": test accuracy " << fixed(r.mean) << " +/- " << fixed(r.std) << " over " << r.repeats.size()
     << " repeats\n";
}

int cmd_buffer(const RunConfig& cfg, std::ostream& os) {
  const auto g = load_dataset(cfg);
  write_snapshot(cfg, cfg.buffer_dir, "buffer");
  const auto trajs = train_experts(g, cfg.buffer, WorkerPool(cfg.threads));
  os << "expert  epochs  final_val_acc  best_val_acc\n";
  for (std::size_t m = 0; m < trajs.size(); ++m) {
    char name[32];
    std::snprintf(name, sizeof(name), "expert_%03zu.traj", m);
    save_trajectory(trajs[m], cfg.buffer_dir / name);
    const auto& acc = trajs[m].meta.val_accuracy;
    const double best = acc.empty() ? 0.0 : *std::max_element(acc.begin(), acc.end());
    char line[128];
    std::snprintf(line, sizeof(line), "%6zu  %6zu  %13.4f  %12.4f\n", m, trajs[m].length() - 1,
                  acc.empty() ? 0.0 : acc.back(), best);
    os << line;
  }
  os << "wrote " << trajs.size() << " trajectories to " << cfg.buffer_dir.string() << '\n';
  return 0;
}

int cmd_condense(const RunConfig& cfg, std::ostream& os) {
  const auto g = load_dataset(cfg);
  std::vector<ExpertTrajectory> trajs;
  std::string provenance;
  for (const auto& f : trajectory_files(cfg.trajectories)) {
    trajs.push_back(load_trajectory(f));
    provenance += (provenance.empty() ? "" : ",") + hex64(trajectory_hash(trajs.back()));
  }
  write_snapshot(cfg, cfg.out, "condense");
  const auto s0 = init_condensed(g, cfg.ratio, cfg.seed, cfg.matching.lr_y > 0.0, cfg.init_lr);
  os << "condensing " << g.num_nodes() << " nodes to " << s0.size() << " with " << trajs.size() << " experts, "
     << cfg.matching.iterations << " iterations, " << window_mode_name(cfg.matching.window_mode) << " window\n";

  std::string log = "iteration,expert,t,window_lower,window,L_M,L_E,L,eta\n";
  const int every = std::max(1, cfg.matching.iterations / 10);
  const auto result = condense(g, trajs, cfg.matching, s0, [&](const MatchOutcome& o) {
    log += std::to_string(o.iteration) + "," + std::to_string(o.expert) + "," + std::to_string(o.start) + "," +
           std::to_string(window_lower(cfg.matching, o.iteration)) + "," + std::to_string(o.window) + "," +
           csv::format_double(o.matching_loss) + "," + csv::format_double(o.kee_loss) + "," +
           csv::format_double(o.total) + "," + csv::format_double(o.inner_lr) + "\n";
    if ((o.iteration + 1) % every == 0) {
      os << "iter " << o.iteration + 1 << "  L_M " << fixed(o.matching_loss) << "  L_E " << fixed(o.kee_loss)
         << "  eta " << fixed(o.inner_lr, 5) << '\n';
    }
  });
  csv::write_text(cfg.out / "condense_log.csv", log);
  save_condensed(result.set, cfg.condensed, provenance, to_ini(cfg));
  os << "wrote condensed set to " << cfg.condensed.string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& os) {
  const auto g = load_dataset(cfg);
  const auto s = load_condensed(cfg.condensed);
  write_snapshot(cfg, cfg.out, "eval");
  const WorkerPool pool(cfg.threads);
  const auto spec = eval_spec(cfg, g);
  report(evaluate_condensed(s, g, spec, cfg.eval, pool), cfg.out, "eval_condensed", os);
  if (cfg.eval_full) report(evaluate_full(g, spec, cfg.eval, pool), cfg.out, "eval_full", os);
  return 0;
}

int cmd_coreset(const RunConfig& cfg, std::ostream& os) {
  const auto g = load_dataset(cfg);
  write_snapshot(cfg, cfg.out, "coreset");
  const auto s = coreset(g, cfg.coreset_ratio, cfg.coreset_method, cfg.seed, cfg.init_lr);
  const std::string stem = std::string("coreset_") + coreset_method_name(cfg.coreset_method);
  save_condensed(s, cfg.out / stem, "", to_ini(cfg));
  report(evaluate_condensed(s, g, eval_spec(cfg, g), cfg.eval, WorkerPool(cfg.threads)), cfg.out, "eval_" + stem,
         os);
  return 0;
}

int cmd_analyze(const RunConfig& cfg, std::ostream& os) {
  write_snapshot(cfg, cfg.out, "analyze");
  constexpr double kNoCheck = std::numeric_limits<double>::infinity();
  ErrorDecomposition d;
  if (cfg.toy == "linreg") {
    const auto toy = LinearRegressionToy::random(cfg.seed);
    const auto expert = toy.expert(cfg.stages * cfg.analyze_p);
    d = error_decomposition(
        expert, [&](const ParameterVector& w, int steps) { return toy.student(w, steps); }, cfg.analyze_p,
        cfg.analyze_q, cfg.stages, ParameterVector::Constant(1, cfg.eps0), kNoCheck);
  } else {
    const auto traj = load_trajectory(cfg.analyze_trajectory);
    const auto s = load_condensed(cfg.condensed);
    const double eta = cfg.analyze_eta > 0.0 ? cfg.analyze_eta : s.inner_lr;
    d = error_decomposition(traj, s, cfg.analyze_p, cfg.analyze_q, eta, cfg.stages,
                            ParameterVector::Constant(static_cast<Eigen::Index>(traj.snapshots.front().size()),
                                                      cfg.eps0),
                            kNoCheck);
  }
  write_decomposition_csv(d, cfg.out / "decomposition.csv");
  os << "stages " << d.stages << "  |eps_N| " << csv::format_double(d.epsilon.back().norm()) << "  sum|delta| "
     << csv::format_double(d.matching_sum_norm()) << "  max residual " << csv::format_double(d.max_residual)
     << '\n';
  if (!(d.max_residual <= cfg.tolerance)) {
    throw AnalyzerError("telescoping identity residual " + csv::format_double(d.max_residual) +
                        " exceeds tolerance " + csv::format_double(cfg.tolerance));
  }
  os << "identity holds within " << csv::format_double(cfg.tolerance) << '\n';
  return 0;
}

int cmd_sbm(const RunConfig& cfg, std::ostream& os) {
  const auto g = generate_sbm(cfg.sbm);
  save_graph(g, cfg.out);
  write_snapshot(cfg, cfg.out, "sbm-gen");
  os << "wrote " << g.num_nodes() << " nodes, " << g.num_edges() << " edges (homophily "
     << fixed(edge_homophily(g)) << ") to " << cfg.out.string() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph condensation with expanding-window trajectory matching"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string out_dir;
  std::vector<std::string> sets;
  app.add_option("--config", config, "INI config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "global seed");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads (default: available parallelism)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", sets, "override a config key: section.key=value (repeatable)");

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&, std::ostream&);
  };
  const Sub subs[] = {
      {"buffer", "train curriculum experts and write trajectories", cmd_buffer},
      {"condense", "match trajectories and write a condensed set", cmd_condense},
      {"eval", "train fresh models on a condensed set and report accuracy", cmd_eval},
      {"coreset", "build and evaluate a coreset baseline", cmd_coreset},
      {"analyze", "check the error decomposition identity", cmd_analyze},
      {"sbm-gen", "write a stochastic block model graph bundle", cmd_sbm},
  };
  Overrides overrides;
  std::string window_mode, method, toy;
  int iterations = -1;
  for (const auto& sub : subs) {
    auto* cmd = app.add_subcommand(sub.name, sub.help);
    if (std::string(sub.name) == "condense") {
      cmd->add_option("--window-mode", window_mode, "expanding, fixed or sliding");
      cmd->add_option("--iterations", iterations, "outer iterations K");
    }
    if (std::string(sub.name) == "coreset") cmd->add_option("--method", method, "random, herding or kcenter");
    if (std::string(sub.name) == "analyze") cmd->add_option("--toy", toy, "linreg, or omit for a trained GNN");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    if (*seed_opt) overrides["run.seed"] = std::to_string(seed);
    if (*threads_opt) overrides["run.threads"] = std::to_string(threads);
    if (*out_opt) overrides["run.out"] = out_dir;
    if (!window_mode.empty()) overrides["condense.window_mode"] = window_mode;
    if (iterations >= 0) overrides["condense.iterations"] = std::to_string(iterations);
    if (!method.empty()) overrides["coreset.method"] = method;
    if (!toy.empty()) overrides["analyze.toy"] = toy;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
      overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    auto cfg = load_run_config(config, overrides);
    cfg.validate(command);
    for (const auto& sub : subs) {
      if (command == sub.name) return sub.fn(cfg, out);
    }
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << command << " failed: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace geom::cli
