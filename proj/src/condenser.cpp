#include "geom/condenser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "geom/csv.hpp"
#include "geom/errors.hpp"

namespace geom {

namespace {

using json = nlohmann::json;

constexpr double kMinInnerLr = 1e-6;
constexpr double kMinSoftLabel = 1e-8;
constexpr int kMaxRedraws = 5;

void project_rows(Matrix& y) {
  y = y.cwiseMax(kMinSoftLabel);
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) /= y.row(r).sum();
}

}  // namespace

void CondensedSet::validate() const {
  if (num_classes < 1) throw ContractError("condensed set: num_classes must be >= 1");
  if (static_cast<std::size_t>(features.rows()) != hard_labels.size()) {
    throw ContractError("condensed set: " + std::to_string(features.rows()) + " feature rows but " +
                        std::to_string(hard_labels.size()) + " labels");
  }
  std::vector<std::size_t> per_class(static_cast<std::size_t>(num_classes), 0);
  for (int y : hard_labels) {
    if (y < 0 || y >= num_classes) throw ContractError("condensed set: label " + std::to_string(y) + " out of range");
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw ContractError("condensed set: class " + std::to_string(c) + " has no node");
    }
  }
  if (soft_labels) {
    const Matrix& y = *soft_labels;
    if (static_cast<std::size_t>(y.rows()) != size() || y.cols() != num_classes) {
      throw ContractError("condensed set: soft labels have the wrong shape");
    }
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      if (y.row(r).minCoeff() < 0.0 || std::abs(y.row(r).sum() - 1.0) > 1e-9) {
        throw ContractError("condensed set: soft label row " + std::to_string(r) + " is not a distribution");
      }
    }
  }
  if (!(inner_lr > 0.0) || !std::isfinite(inner_lr)) throw ContractError("condensed set: inner_lr must be > 0");
}

Matrix CondensedSet::targets(bool soft) const {
  if (soft && soft_labels) return *soft_labels;
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(size()), num_classes);
  for (std::size_t i = 0; i < size(); ++i) t(static_cast<Eigen::Index>(i), hard_labels[i]) = 1.0;
  return t;
}

std::vector<std::size_t> class_allocation(const GraphDataset& g, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("condensation ratio must be in (0, 1)");
  const auto train = g.train_indices();
  const auto classes = static_cast<std::size_t>(g.num_classes());
  std::vector<std::size_t> count(classes, 0);
  for (auto i : train) ++count[static_cast<std::size_t>(g.labels()[i])];
  const auto total = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(train.size())));
  if (total < classes) {
    throw ConfigError("ratio " + csv::format_double(ratio) + " gives " + std::to_string(total) +
                      " condensed nodes for " + std::to_string(classes) + " classes");
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (count[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no training node");
  }

  // Largest remainder on exact integer quotas total * n_c / |train|.
  std::vector<std::size_t> alloc(classes);
  std::vector<std::size_t> remainder(classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    alloc[c] = std::max<std::size_t>(1, total * count[c] / train.size());
    remainder[c] = total * count[c] % train.size();
    assigned += alloc[c];
  }
  std::vector<std::size_t> by_remainder(classes);
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  while (assigned < total) {
    bool moved = false;
    for (auto c : by_remainder) {
      if (assigned == total) break;
      if (alloc[c] < count[c]) {
        ++alloc[c];
        ++assigned;
        moved = true;
      }
    }
    if (!moved) break;
  }
  // The at-least-one floor can overshoot; take back from the largest classes.
  while (assigned > total) {
    const auto c = static_cast<std::size_t>(std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
    --alloc[c];
    --assigned;
  }
  return alloc;
}

CondensedSet init_condensed(const GraphDataset& g, double ratio, std::uint64_t seed,
                            bool use_soft_labels, double inner_lr) {
  if (!(inner_lr > 0.0)) throw ConfigError("initial inner learning rate must be > 0");
  const auto alloc = class_allocation(g, ratio);
  const int classes = g.num_classes();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(classes));
  for (auto i : g.train_indices()) members[static_cast<std::size_t>(g.labels()[i])].push_back(i);

  std::mt19937_64 rng(seed);
  CondensedSet s;
  s.num_classes = classes;
  s.inner_lr = inner_lr;
  const auto n = std::accumulate(alloc.begin(), alloc.end(), std::size_t{0});
  s.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g.feature_dim()));
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    auto pool = members[static_cast<std::size_t>(c)];
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < alloc[static_cast<std::size_t>(c)]; ++k) {
      s.features.row(row++) = g.features().row(static_cast<Eigen::Index>(pool[k]));
      s.hard_labels.push_back(c);
    }
  }
  if (use_soft_labels) {
    Matrix y = s.targets(false) * 0.9;
    y.array() += 0.1 / classes;
    s.soft_labels = std::move(y);
  }
  s.validate();
  return s;
}

WindowMode parse_window_mode(const std::string& name) {
  if (name == "expanding") return WindowMode::kExpanding;
  if (name == "fixed") return WindowMode::kFixed;
  if (name == "sliding") return WindowMode::kSliding;
  throw ConfigError("unknown window mode '" + name + "' (expanding, fixed, sliding)");
}

const char* window_mode_name(WindowMode mode) {
  switch (mode) {
    case WindowMode::kExpanding: return "expanding";
    case WindowMode::kFixed: return "fixed";
    case WindowMode::kSliding: return "sliding";
  }
  return "expanding";
}

void MatchingConfig::validate() const {
  if (p < 1) throw ConfigError("matching: p must be >= 1");
  if (q < 1) throw ConfigError("matching: q must be >= 1");
  if (q > q_cap) throw ConfigError("matching: q=" + std::to_string(q) + " exceeds q_cap=" + std::to_string(q_cap));
  if (U0 < 0 || U0 > U_max) throw ConfigError("matching: need 0 <= U0 <= U_max");
  if (iterations < 0) throw ConfigError("matching: iterations must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("matching: alpha must be >= 0");
  if (!(lr_feat >= 0.0) || !(lr_y >= 0.0) || !(lr_lr >= 0.0)) {
    throw ConfigError("matching: outer learning rates must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("matching: momentum must be in [0, 1)");
}

int MatchingConfig::max_start() const { return window_mode == WindowMode::kFixed ? U0 : U_max; }

int window_lower(const MatchingConfig& cfg, int iteration) {
  if (cfg.window_mode != WindowMode::kSliding) return 0;
  return std::max(iteration, 0) % (cfg.U_max - cfg.U0 + 1);
}

int window_upper(const MatchingConfig& cfg, int iteration) {
  const int i = std::max(iteration, 0);
  switch (cfg.window_mode) {
    case WindowMode::kFixed:
      return cfg.U0;
    case WindowMode::kSliding:
      return window_lower(cfg, i) + cfg.U0;
    case WindowMode::kExpanding:
      if (cfg.literal_window && i >= cfg.U0 && i < cfg.U_max) return std::min(cfg.U0 + i, cfg.U_max);
      return static_cast<int>(std::min<long long>(static_cast<long long>(cfg.U0) + i, cfg.U_max));
  }
  return cfg.U0;
}

std::vector<int> window_candidates(const MatchingConfig& cfg, int iteration) {
  const int i = std::max(iteration, 0);
  std::vector<int> out;
  if (cfg.window_mode == WindowMode::kExpanding && cfg.literal_window && i < cfg.U_max) {
    for (int t = 0; t <= cfg.U0; ++t) out.push_back(t);
    if (i >= cfg.U0) {
      const int extra = std::min(cfg.U0 + i, cfg.U_max);
      if (extra > cfg.U0) out.push_back(extra);
    }
    return out;
  }
  const int lo = window_lower(cfg, i);
  const int hi = cfg.literal_window && cfg.window_mode == WindowMode::kExpanding ? cfg.U_max : window_upper(cfg, i);
  for (int t = lo; t <= hi; ++t) out.push_back(t);
  return out;
}

SampledMatch sample_match(const ExpertTrajectory& traj, const MatchingConfig& cfg, int iteration,
                          std::mt19937_64& rng) {
  const auto candidates = window_candidates(cfg, iteration);
  if (static_cast<std::size_t>(candidates.back() + cfg.p) >= traj.length()) {
    throw ConfigError("trajectory has " + std::to_string(traj.length()) + " snapshots, window start " +
                      std::to_string(candidates.back()) + " + p=" + std::to_string(cfg.p) +
                      " is out of range");
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  SampledMatch m;
  m.start = candidates[pick(rng)];
  const auto target = static_cast<std::size_t>(m.start + cfg.p);
  m.theta_start = &traj.snapshots[static_cast<std::size_t>(m.start)];
  m.theta_target = &traj.snapshots[target];
  return m;
}

ad::Var unroll_sgd(const ad::Var& theta, const ad::Var& lr, int q,
                   const std::function<ad::Var(const ad::Var&)>& loss) {
  if (!theta.requires_grad()) throw ContractError("unroll_sgd: starting parameters must be a variable");
  ad::Var current = theta;
  for (int i = 0; i < q; ++i) {
    ad::Var l = loss(current);
    ad::Var g = current.tape().grad(l, std::span<const ad::Var>(&current, 1), true)[0];
    if (!std::isfinite(l.scalar()) || !g.value().allFinite()) {
      throw TrainingError("inner loop diverged at step " + std::to_string(i));
    }
    current = ad::sub(current, ad::scalar_mul(lr, g));
  }
  return current;
}

ad::Var inner_loop(const ModelSpec& spec, const ad::Var& theta, const ad::Var& features,
                   const ad::Var& targets, const ad::Var& lr, int q) {
  const double n = static_cast<double>(features.rows());
  return unroll_sgd(theta, lr, q, [&](const ad::Var& th) {
    return cross_entropy(forward(spec, th, features, nullptr), targets, n);
  });
}

ParameterVector inner_loop(const ModelSpec& spec, const ParameterVector& theta,
                           const CondensedSet& s, int q, double lr, bool soft) {
  ad::Tape tape;
  Matrix eta(1, 1);
  eta(0, 0) = lr;
  return inner_loop(spec, tape.variable(theta), tape.constant(s.features),
                    tape.constant(s.targets(soft)), tape.constant(eta), q)
      .value();
}

double matching_loss(const ParameterVector& student, const ParameterVector& target,
                     const ParameterVector& start) {
  if (student.size() != target.size() || start.size() != target.size()) {
    throw DimensionError("matching_loss: parameter vectors differ in length");
  }
  const double den = (start - target).squaredNorm();
  if (den < 1e-24) throw DomainError("matching_loss: degenerate match, start equals target");
  return (student - target).squaredNorm() / den;
}

ad::Var matching_loss(const ad::Var& student, const ParameterVector& target,
                      const ParameterVector& start) {
  if (student.rows() != target.size() || student.cols() != 1 || start.size() != target.size()) {
    throw DimensionError("matching_loss: parameter vectors differ in length");
  }
  const double den = (start - target).squaredNorm();
  if (den < 1e-24) throw DomainError("matching_loss: degenerate match, start equals target");
  ad::Var d = ad::sub(student, student.tape().constant(target));
  return ad::scale(ad::sum(ad::mul(d, d)), 1.0 / den);
}

ad::Var kee_loss(const ModelSpec& spec, const ParameterVector& expert_final, const ad::Var& features,
                 const ad::Var& soft_labels) {
  ad::Tape& tape = features.tape();
  ad::Var logp = ad::row_log_softmax(forward(spec, tape.constant(expert_final), features, nullptr));
  ad::Var kl = ad::sum(ad::mul(ad::exp(logp), ad::sub(logp, ad::log(soft_labels))));
  return ad::scale(kl, 1.0 / static_cast<double>(features.rows()));
}

double kee_loss(const ModelSpec& spec, const ParameterVector& expert_final, const CondensedSet& s) {
  if (!s.soft_labels) throw ContractError("kee_loss: condensed set has no soft labels");
  ad::Tape tape;
  return kee_loss(spec, expert_final, tape.constant(s.features), tape.constant(*s.soft_labels)).scalar();
}

MatchEvaluation evaluate_match(const ModelSpec& spec, const CondensedSet& s,
                               const ParameterVector& start, const ParameterVector& target,
                               const ParameterVector* expert_final, int q, double alpha, bool soft,
                               bool soft_inner) {
  if (soft && !s.soft_labels) throw ContractError("evaluate_match: soft labels requested but absent");
  const bool kee = soft && expert_final != nullptr && alpha > 0.0;
  ad::Tape tape;
  std::vector<ad::Var> wrt;
  ad::Var x = tape.variable(s.features);
  Matrix eta(1, 1);
  eta(0, 0) = s.inner_lr;
  ad::Var lr = tape.variable(eta);
  wrt = {x, lr};
  ad::Var y;
  if (soft) {
    y = tape.variable(*s.soft_labels);
    wrt.push_back(y);
  }
  ad::Var targets = soft && soft_inner ? y : tape.constant(s.targets(false));
  ad::Var student = inner_loop(spec, tape.variable(start), x, targets, lr, q);
  ad::Var lm = matching_loss(student, target, start);

  MatchEvaluation out;
  out.matching_loss = lm.scalar();
  ad::Var total = lm;
  if (kee) {
    ad::Var le = kee_loss(spec, *expert_final, x, y);
    out.kee_loss = le.scalar();
    total = ad::add(lm, ad::scale(le, alpha));
  }
  out.total = out.matching_loss + alpha * out.kee_loss;
  const auto grads = tape.grad(total, wrt);
  out.grad_features = grads[0].value();
  out.grad_lr = grads[1].value()(0, 0);
  if (soft) out.grad_soft_labels = grads[2].value();
  return out;
}

void check_trajectories(const std::vector<ExpertTrajectory>& trajectories, const MatchingConfig& cfg) {
  if (trajectories.empty()) throw ConfigError("condense: no expert trajectories");
  const auto& first = trajectories.front().spec;
  const auto need = static_cast<std::size_t>(cfg.max_start() + cfg.p + 1);
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& t = trajectories[k];
    if (!t.spec.same_shape(first)) {
      throw ConfigError("trajectory " + std::to_string(k) + " is " + t.spec.describe() +
                        " but trajectory 0 is " + first.describe());
    }
    try {
      t.validate();
    } catch (const ContractError& e) {
      throw ConfigError("trajectory " + std::to_string(k) + ": " + e.what());
    }
    if (t.length() < need) {
      throw ConfigError("trajectory " + std::to_string(k) + " has " + std::to_string(t.length()) +
                        " snapshots; window bound " + std::to_string(cfg.max_start()) +
                        " + p=" + std::to_string(cfg.p) + " needs " + std::to_string(need));
    }
  }
}

CondenseResult condense(const GraphDataset& g, const std::vector<ExpertTrajectory>& trajectories,
                        const MatchingConfig& cfg, const CondensedSet& initial,
                        const std::function<void(const MatchOutcome&)>& on_iteration) {
  cfg.validate();
  initial.validate();
  check_trajectories(trajectories, cfg);
  const ModelSpec spec = trajectories.front().spec;
  if (static_cast<std::size_t>(initial.features.cols()) != spec.in_dim || g.feature_dim() != spec.in_dim) {
    throw ContractError("condense: feature width does not match the expert model " + spec.describe());
  }
  if (static_cast<std::size_t>(initial.num_classes) != spec.out_dim) {
    throw ContractError("condense: class count does not match the expert model " + spec.describe());
  }
  if (cfg.lr_y > 0.0 && !initial.soft_labels) {
    throw ConfigError("condense: lr_y > 0 needs a condensed set with soft labels");
  }
  const bool soft = cfg.lr_y > 0.0;

  CondenseResult result{initial, {}};
  CondensedSet& s = result.set;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_expert(0, trajectories.size() - 1);
  Matrix vel_x = Matrix::Zero(s.features.rows(), s.features.cols());
  Matrix vel_y;
  if (soft) vel_y = Matrix::Zero(s.soft_labels->rows(), s.soft_labels->cols());
  double vel_lr = 0.0;

  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t expert = 0;
    SampledMatch m;
    bool found = false;
    for (int draw = 0; draw <= kMaxRedraws && !found; ++draw) {
      expert = pick_expert(rng);
      m = sample_match(trajectories[expert], cfg, it, rng);
      found = (*m.theta_start - *m.theta_target).squaredNorm() >= 1e-24;
    }
    if (!found) {
      throw TrainingError("condense: iteration " + std::to_string(it) + " drew " +
                          std::to_string(kMaxRedraws + 1) + " degenerate matches in a row");
    }
    const auto* expert_final = soft && cfg.alpha > 0.0 ? &trajectories[expert].snapshots.back() : nullptr;
    MatchEvaluation ev;
    try {
      ev = evaluate_match(spec, s, *m.theta_start, *m.theta_target, expert_final, cfg.q, cfg.alpha,
                          soft, cfg.soft_inner);
    } catch (const TrainingError& e) {
      throw TrainingError("condense: iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(ev.total) || !ev.grad_features.allFinite() || !std::isfinite(ev.grad_lr) ||
        (ev.grad_soft_labels && !ev.grad_soft_labels->allFinite())) {
      throw TrainingError("condense: non-finite outer gradient at iteration " + std::to_string(it));
    }

    vel_x = cfg.momentum * vel_x + ev.grad_features;
    s.features -= cfg.lr_feat * vel_x;
    vel_lr = cfg.momentum * vel_lr + ev.grad_lr;
    s.inner_lr = std::max(s.inner_lr - cfg.lr_lr * vel_lr, kMinInnerLr);
    if (soft) {
      vel_y = cfg.momentum * vel_y + *ev.grad_soft_labels;
      *s.soft_labels -= cfg.lr_y * vel_y;
      project_rows(*s.soft_labels);
    }

    MatchOutcome o;
    o.iteration = it;
    o.expert = expert;
    o.start = m.start;
    o.window = window_upper(cfg, it);
    o.matching_loss = ev.matching_loss;
    o.kee_loss = ev.kee_loss;
    o.total = ev.total;
    o.inner_lr = s.inner_lr;
    result.log.push_back(o);
    if (on_iteration) on_iteration(o);
  }
  return result;
}

void save_condensed(const CondensedSet& s, const std::filesystem::path& dir,
                    const std::string& provenance, const std::string& config_text) {
  s.validate();
  std::filesystem::create_directories(dir);
  csv::write_matrix(dir / "features.csv", s.features);
  csv::write_int_column(dir / "labels.csv", s.hard_labels);
  if (s.soft_labels) {
    csv::write_matrix(dir / "soft_labels.csv", *s.soft_labels);
  } else {
    std::filesystem::remove(dir / "soft_labels.csv");
  }
  json meta{{"inner_lr", s.inner_lr},
            {"num_classes", s.num_classes},
            {"nodes", s.size()},
            {"feature_dim", s.features.cols()},
            {"soft_labels", s.soft_labels.has_value()},
            {"provenance", provenance},
            {"config", config_text}};
  csv::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

CondensedSet load_condensed(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw LoadError("missing " + meta_path.string());
  CondensedSet s;
  bool soft = false;
  try {
    std::ifstream in(meta_path);
    const json meta = json::parse(in);
    s.inner_lr = meta.at("inner_lr").get<double>();
    s.num_classes = meta.at("num_classes").get<int>();
    soft = meta.at("soft_labels").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  s.features = csv::read_matrix(dir / "features.csv");
  s.hard_labels = csv::read_int_column(dir / "labels.csv");
  if (soft) s.soft_labels = csv::read_matrix(dir / "soft_labels.csv", static_cast<std::size_t>(s.num_classes));
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw LoadError(dir.string() + ": " + e.what());
  }
  return s;
}

}  // namespace geom
