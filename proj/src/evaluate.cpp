#include <cmath>
#include <json.hpp>

#include "geom/csv.hpp"
#include "geom/errors.hpp"
#include "geom/evaluator.hpp"

namespace geom {

namespace {

// Full-batch SGD from a fresh init; probes val/test on the full graph every
// eval_interval epochs. Only `x`, `train_adj` and `targets` drive training.
RepeatResult train_and_probe(const ModelSpec& spec, const Matrix& x, const NormalizedAdjacency* train_adj,
                             const Matrix& targets, double normalizer, double lr, const GraphDataset& g,
                             const NormalizedAdjacency& eval_adj, const EvalProtocol& proto) {
  const auto val = g.val_indices();
  const auto test = g.test_indices();
  ParameterVector theta = init_params(spec);
  RepeatResult best;
  best.seed = spec.seed;
  best.val_accuracy = -1.0;
  for (int epoch = 1; epoch <= proto.train_epochs; ++epoch) {
    const auto lg = loss_and_grad(spec, theta, x, train_adj, targets, normalizer);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      throw TrainingError("evaluation diverged at epoch " + std::to_string(epoch) + " (seed " +
                          std::to_string(spec.seed) + ")");
    }
    theta -= lr * lg.grad;
    if (epoch % proto.eval_interval != 0 && epoch != proto.train_epochs) continue;
    const Matrix logits = predict(spec, theta, g.features(), &eval_adj);
    const double v = accuracy(logits, g.labels(), val);
    if (v > best.val_accuracy) {
      best.val_accuracy = v;
      best.test_accuracy = accuracy(logits, g.labels(), test);
      best.best_epoch = epoch;
    }
  }
  return best;
}

}  // namespace

void EvalProtocol::validate() const {
  if (train_epochs < 1) throw ConfigError("eval: train_epochs must be >= 1");
  if (eval_interval < 1 || eval_interval > train_epochs) {
    throw ConfigError("eval: eval_interval must be in [1, train_epochs]");
  }
  if (!(lr > 0.0)) throw ConfigError("eval: lr must be > 0");
  if (repeats < 1) throw ConfigError("eval: repeats must be >= 1");
}

void EvalReport::aggregate() {
  mean = 0.0;
  std = 0.0;
  if (repeats.empty()) return;
  for (const auto& r : repeats) mean += r.test_accuracy;
  mean /= static_cast<double>(repeats.size());
  if (repeats.size() < 2) return;
  double ss = 0.0;
  for (const auto& r : repeats) ss += (r.test_accuracy - mean) * (r.test_accuracy - mean);
  std = std::sqrt(ss / static_cast<double>(repeats.size() - 1));
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat) {
  // Distinct stream from the expert seeds.
  return expert_seed(seed ^ 0x6576616c75617465ULL, repeat);
}

EvalReport evaluate_condensed(const CondensedSet& s, const GraphDataset& g, const ModelSpec& spec,
                              const EvalProtocol& proto, const WorkerPool& pool) {
  proto.validate();
  s.validate();
  if (static_cast<std::size_t>(s.features.cols()) != g.feature_dim() || spec.in_dim != g.feature_dim()) {
    throw ContractError("evaluate_condensed: condensed features have " + std::to_string(s.features.cols()) +
                        " columns, graph has " + std::to_string(g.feature_dim()) + ", model expects " +
                        std::to_string(spec.in_dim));
  }
  if (static_cast<int>(spec.out_dim) != g.num_classes() || s.num_classes != g.num_classes()) {
    throw ContractError("evaluate_condensed: class count mismatch");
  }
  const auto adj = normalize_adjacency(g);
  const Matrix targets = s.targets(true);
  const double lr = proto.use_inner_lr ? s.inner_lr : proto.lr;
  EvalReport report;
  report.label = "condensed";
  report.repeats.resize(proto.repeats);
  pool.for_each(proto.repeats, [&](std::size_t r) {
    ModelSpec m = spec;
    m.seed = repeat_seed(proto.seed, r);
    report.repeats[r] = train_and_probe(m, s.features, nullptr, targets, static_cast<double>(s.size()), lr, g,
                                        adj, proto);
  });
  report.aggregate();
  return report;
}

EvalReport evaluate_full(const GraphDataset& g, const ModelSpec& spec, const EvalProtocol& proto,
                         const WorkerPool& pool) {
  proto.validate();
  if (spec.in_dim != g.feature_dim() || static_cast<int>(spec.out_dim) != g.num_classes()) {
    throw ContractError("evaluate_full: model " + spec.describe() + " does not fit the graph");
  }
  const auto adj = normalize_adjacency(g);
  const auto train = g.train_indices();
  const Matrix targets = one_hot_rows(g.num_nodes(), g.num_classes(), g.labels(), train);
  EvalReport report;
  report.label = "full";
  report.repeats.resize(proto.repeats);
  pool.for_each(proto.repeats, [&](std::size_t r) {
    ModelSpec m = spec;
    m.seed = repeat_seed(proto.seed, r);
    report.repeats[r] = train_and_probe(m, g.features(), &adj, targets, static_cast<double>(train.size()),
                                        proto.lr, g, adj, proto);
  });
  report.aggregate();
  return report;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::string out = "kind,repeat,seed,best_epoch,val_accuracy,test_accuracy,test_std\n";
  for (std::size_t r = 0; r < report.repeats.size(); ++r) {
    const auto& x = report.repeats[r];
    out += "repeat," + std::to_string(r) + "," + std::to_string(x.seed) + "," + std::to_string(x.best_epoch) +
           "," + csv::format_double(x.val_accuracy) + "," + csv::format_double(x.test_accuracy) + ",\n";
  }
  out += "aggregate,,,,," + csv::format_double(report.mean) + "," + csv::format_double(report.std) + "\n";
  csv::write_text(path, out);
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["label"] = report.label;
  j["mean_test_accuracy"] = report.mean;
  j["std_test_accuracy"] = report.std;
  j["repeats"] = nlohmann::json::array();
  for (const auto& r : report.repeats) {
    j["repeats"].push_back({{"seed", r.seed},
                            {"best_epoch", r.best_epoch},
                            {"val_accuracy", r.val_accuracy},
                            {"test_accuracy", r.test_accuracy}});
  }
  csv::write_text(path, j.dump(2) + "\n");
}

}  // namespace geom
