#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geom/condenser.hpp"

namespace geom {

struct EvalProtocol {
  int train_epochs = 200;
  int eval_interval = 20;
  double lr = 0.2;
  // Train on a condensed set with its learned inner learning rate instead of lr.
  bool use_inner_lr = true;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RepeatResult {
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct EvalReport {
  std::string label;
  std::vector<RepeatResult> repeats;
  double mean = 0.0;  // test accuracy
  double std = 0.0;   // sample standard deviation, 0 for one repeat

  void aggregate();
};

// Trains a fresh model on the condensed set (identity propagation, soft
// labels when present) per repeat and reports the test accuracy on g at the
// checkpoint with the best validation accuracy.
EvalReport evaluate_condensed(const CondensedSet& s, const GraphDataset& g, const ModelSpec& spec,
                              const EvalProtocol& proto, const WorkerPool& pool = WorkerPool(1));

// Same protocol trained on g's whole training split with g's structure, at
// proto.lr.
EvalReport evaluate_full(const GraphDataset& g, const ModelSpec& spec, const EvalProtocol& proto,
                         const WorkerPool& pool = WorkerPool(1));

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);

enum class CoresetMethod { kRandom, kHerding, kKCenter };

CoresetMethod parse_coreset_method(const std::string& name);
const char* coreset_method_name(CoresetMethod method);

// Per-class selection from g's training rows on raw features, with the same
// class allocation as init_condensed. The result has no soft labels.
CondensedSet coreset(const GraphDataset& g, double ratio, CoresetMethod method, std::uint64_t seed,
                     double inner_lr);

// Row indices (into x) chosen by the greedy rules, in selection order.
std::vector<std::size_t> herding_select(const Matrix& x, std::size_t k);
std::vector<std::size_t> kcenter_select(const Matrix& x, std::size_t k);

struct ClusteringScores {
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
};

// Euclidean silhouette, Davies-Bouldin and Calinski-Harabasz indices.
ClusteringScores clustering_metrics(const Matrix& x, const std::vector<int>& labels);

// Stage n starts at theta*_{n,0} = snapshot n*p. The student enters stage n at
// theta*_{n,0} + eps_n and trains q steps on S; with Theta_S the change after
// q steps and Theta_T the expert change over p epochs,
//   I_n       = Theta_S(theta*_{n,0} + eps_n) - Theta_S(theta*_{n,0})
//   delta_n+1 = Theta_S(theta*_{n,0}) - Theta_T(theta*_{n,0})
//   eps_n+1   = eps_n + I_n + delta_n+1
struct ErrorDecomposition {
  int stages = 0;
  int p = 0;
  int q = 0;
  std::vector<ParameterVector> epsilon;         // eps_0 .. eps_N
  std::vector<ParameterVector> initialization;  // I_0 .. I_N-1
  std::vector<ParameterVector> matching;        // delta_1 .. delta_N
  std::vector<double> residual;                 // max |coordinate| per stage, n = 1..N
  double max_residual = 0.0;

  double matching_sum_norm() const;  // sum of ||delta||, the report's mu proxy
};

// Parameters after `steps` student steps from `theta`.
using StudentRun = std::function<ParameterVector(const ParameterVector& theta, int steps)>;

// Throws AnalyzerError if the identity residual exceeds `tolerance`.
ErrorDecomposition error_decomposition(const std::vector<ParameterVector>& expert, const StudentRun& student,
                                       int p, int q, int stages, const ParameterVector& eps0,
                                       double tolerance = 1e-9);

// Student = inner_loop on the condensed set with step size eta.
ErrorDecomposition error_decomposition(const ExpertTrajectory& traj, const CondensedSet& s, int p, int q,
                                       double eta, int stages, std::optional<ParameterVector> eps0 = {},
                                       double tolerance = 1e-9);

void write_decomposition_csv(const ErrorDecomposition& d, const std::filesystem::path& path);

// One-weight least squares y ~ w x, trained by plain gradient descent on a
// "full" set T (the expert) and a small set S (the student).
struct LinearRegressionToy {
  std::vector<double> xt, yt, xs, ys;
  double lr_t = 0.1;
  double lr_s = 0.1;
  double w0 = 0.0;

  static LinearRegressionToy random(std::uint64_t seed, std::size_t n_t = 50, std::size_t n_s = 3);
  std::vector<ParameterVector> expert(int epochs) const;
  ParameterVector student(const ParameterVector& w, int steps) const;
};

}  // namespace geom
