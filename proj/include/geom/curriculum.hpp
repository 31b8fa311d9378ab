#pragma once

#include <string>
#include <vector>

#include "geom/graph.hpp"

namespace geom {

// Homophily-based node difficulty: entropy of the label distribution over the
// closed neighborhood N(x) + {x}, counting only nodes whose label is known
// (training nodes).
struct DifficultyProfile {
  std::vector<double> scores;       // one per node, natural-log entropy
  std::vector<std::size_t> order;   // training nodes by ascending score, ties by index
};

DifficultyProfile difficulty_scores(const GraphDataset& g);

enum class PacingKind { kLinear, kRoot, kGeometric };

PacingKind parse_pacing_kind(const std::string& name);
const char* pacing_kind_name(PacingKind kind);

struct PacingConfig {
  PacingKind kind = PacingKind::kLinear;
  double lambda0 = 0.5;  // proportion of training nodes available at epoch 0
  int zeta = 50;         // epoch at which the whole training set is in use
  int extra_epochs = 25; // full-set epochs after the curriculum

  void validate() const;
};

// Fraction of the (difficulty-sorted) training set used at epoch t.
double pacing(const PacingConfig& cfg, int t);

// The ceil(h(t) * |train|) easiest training nodes, in difficulty order.
std::vector<std::size_t> subset_at(const DifficultyProfile& profile, const PacingConfig& cfg, int t);

}  // namespace geom
