#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "geom/buffer.hpp"

namespace geom {

// Structure-free condensed node set. Models consume it with identity
// propagation.
struct CondensedSet {
  Matrix features;                    // N' x d
  std::vector<int> hard_labels;       // N'
  std::optional<Matrix> soft_labels;  // N' x C, row-stochastic
  double inner_lr = 0.01;
  int num_classes = 0;

  std::size_t size() const { return hard_labels.size(); }
  void validate() const;
  // One-hot hard labels, or the soft labels when present and `soft` is set.
  Matrix targets(bool soft) const;
};

// Per-class counts for N' = floor(ratio * |train|) condensed nodes:
// proportional to training class frequencies (largest remainder), at least
// one per class, never more than the class has.
std::vector<std::size_t> class_allocation(const GraphDataset& g, double ratio);

// Features copied from uniformly sampled real training nodes of each class.
// Soft labels, when enabled, start at 0.9 * one-hot + 0.1 / C.
CondensedSet init_condensed(const GraphDataset& g, double ratio, std::uint64_t seed,
                            bool use_soft_labels, double inner_lr);

enum class WindowMode { kExpanding, kFixed, kSliding };

WindowMode parse_window_mode(const std::string& name);
const char* window_mode_name(WindowMode mode);

struct MatchingConfig {
  int p = 5;          // expert epochs per match
  int q = 5;          // student steps per match
  int q_cap = 64;     // bounds the unrolled tape
  int U0 = 3;         // initial window upper bound
  int U_max = 40;     // final window upper bound
  int iterations = 200;
  double alpha = 0.0;  // KEE weight
  double lr_feat = 0.1;
  double lr_y = 0.0;   // 0 disables soft labels entirely
  double lr_lr = 1e-6;
  double momentum = 0.5;
  WindowMode window_mode = WindowMode::kExpanding;
  // Eq. 5 taken literally: [0, U0] plus the single start U0 + I while
  // U0 <= I < U_max, then [0, U_max].
  bool literal_window = false;
  // Soft labels drive the student loss (otherwise only the KEE term).
  bool soft_inner = true;
  std::uint64_t seed = 0;

  void validate() const;
  // Largest start index any iteration can draw.
  int max_start() const;
};

// Upper edge of the start window at iteration I.
int window_upper(const MatchingConfig& cfg, int iteration);
int window_lower(const MatchingConfig& cfg, int iteration);
// Every start index iteration I may draw, ascending.
std::vector<int> window_candidates(const MatchingConfig& cfg, int iteration);

struct SampledMatch {
  int start = 0;
  const ParameterVector* theta_start = nullptr;
  const ParameterVector* theta_target = nullptr;
};

SampledMatch sample_match(const ExpertTrajectory& traj, const MatchingConfig& cfg, int iteration,
                          std::mt19937_64& rng);

// q differentiable SGD steps theta <- theta - lr * d loss(theta) / d theta.
ad::Var unroll_sgd(const ad::Var& theta, const ad::Var& lr, int q,
                   const std::function<ad::Var(const ad::Var&)>& loss);

// Student training on the condensed set (identity adjacency) starting at
// theta, recorded on theta's tape.
ad::Var inner_loop(const ModelSpec& spec, const ad::Var& theta, const ad::Var& features,
                   const ad::Var& targets, const ad::Var& lr, int q);
ParameterVector inner_loop(const ModelSpec& spec, const ParameterVector& theta,
                           const CondensedSet& s, int q, double lr, bool soft = false);

// ||student - target||^2 / ||start - target||^2. Throws DomainError when the
// denominator is below 1e-24.
double matching_loss(const ParameterVector& student, const ParameterVector& target,
                     const ParameterVector& start);
ad::Var matching_loss(const ad::Var& student, const ParameterVector& target,
                      const ParameterVector& start);

// Mean over rows of KL(softmax(f(theta_T; X)) || Y).
ad::Var kee_loss(const ModelSpec& spec, const ParameterVector& expert_final, const ad::Var& features,
                 const ad::Var& soft_labels);
double kee_loss(const ModelSpec& spec, const ParameterVector& expert_final, const CondensedSet& s);

struct MatchEvaluation {
  double matching_loss = 0.0;
  double kee_loss = 0.0;
  double total = 0.0;
  Matrix grad_features;
  std::optional<Matrix> grad_soft_labels;
  double grad_lr = 0.0;
};

// L = L_M + alpha * L_E and its gradients with respect to the condensed
// features, inner learning rate and, when `soft`, the soft labels. The KEE
// term needs soft labels and is skipped when expert_final is null or alpha
// is 0. `soft_inner` makes the soft labels the student's targets.
MatchEvaluation evaluate_match(const ModelSpec& spec, const CondensedSet& s,
                               const ParameterVector& start, const ParameterVector& target,
                               const ParameterVector* expert_final, int q, double alpha, bool soft,
                               bool soft_inner = true);

struct MatchOutcome {
  int iteration = 0;
  std::size_t expert = 0;
  int start = 0;
  int window = 0;  // window upper bound used
  double matching_loss = 0.0;
  double kee_loss = 0.0;
  double total = 0.0;
  double inner_lr = 0.0;
};

struct CondenseResult {
  CondensedSet set;
  std::vector<MatchOutcome> log;
};

// Algorithm 1. `on_iteration`, when given, sees every outcome as it happens.
CondenseResult condense(const GraphDataset& g, const std::vector<ExpertTrajectory>& trajectories,
                        const MatchingConfig& cfg, const CondensedSet& initial,
                        const std::function<void(const MatchOutcome&)>& on_iteration = {});

// Throws ConfigError describing the first mismatch.
void check_trajectories(const std::vector<ExpertTrajectory>& trajectories, const MatchingConfig& cfg);

// features.csv, labels.csv, optional soft_labels.csv and meta.json.
void save_condensed(const CondensedSet& s, const std::filesystem::path& dir,
                    const std::string& provenance = "", const std::string& config_text = "");
CondensedSet load_condensed(const std::filesystem::path& dir);

}  // namespace geom
