#include "geom/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geom/errors.hpp"

namespace geom {

DifficultyProfile difficulty_scores(const GraphDataset& g) {
  const auto train = g.train_indices();
  if (train.empty()) throw ContractError("difficulty_scores: empty training set");
  std::vector<char> labeled(g.num_nodes(), 0);
  for (auto i : train) labeled[i] = 1;

  const auto classes = static_cast<std::size_t>(g.num_classes());
  DifficultyProfile profile;
  profile.scores.assign(g.num_nodes(), 0.0);
  std::vector<std::size_t> counts(classes);
  for (std::size_t x = 0; x < g.num_nodes(); ++x) {
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t total = 0;
    const auto visit = [&](std::size_t n) {
      if (!labeled[n]) return;
      ++counts[static_cast<std::size_t>(g.labels()[n])];
      ++total;
    };
    visit(x);
    for (auto n : g.neighbors(x)) visit(n);
    if (total == 0) continue;
    double entropy = 0.0;
    for (auto c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(total);
      entropy -= p * std::log(p);
    }
    // -0.0 from a single-class neighborhood
    profile.scores[x] = entropy + 0.0;
  }
  profile.order = train;
  std::stable_sort(profile.order.begin(), profile.order.end(), [&](std::size_t a, std::size_t b) {
    return profile.scores[a] < profile.scores[b];
  });
  return profile;
}

PacingKind parse_pacing_kind(const std::string& name) {
  if (name == "linear") return PacingKind::kLinear;
  if (name == "root") return PacingKind::kRoot;
  if (name == "geometric") return PacingKind::kGeometric;
  throw ConfigError("unknown pacing function '" + name + "' (linear, root, geometric)");
}

const char* pacing_kind_name(PacingKind kind) {
  switch (kind) {
    case PacingKind::kLinear: return "linear";
    case PacingKind::kRoot: return "root";
    case PacingKind::kGeometric: return "geometric";
  }
  return "linear";
}

void PacingConfig::validate() const {
  if (!(lambda0 > 0.0 && lambda0 <= 1.0)) throw ConfigError("pacing: lambda0 must be in (0, 1]");
  if (zeta < 1) throw ConfigError("pacing: zeta must be >= 1");
  if (extra_epochs < 0) throw ConfigError("pacing: extra_epochs must be >= 0");
}

double pacing(const PacingConfig& cfg, int t) {
  // Saturated exactly; the closed forms can land one ulp below 1 at t = zeta.
  if (t >= cfg.zeta) return 1.0;
  const double frac = static_cast<double>(std::max(t, 0)) / static_cast<double>(cfg.zeta);
  const double lam = cfg.lambda0;
  double h = 1.0;
  switch (cfg.kind) {
    case PacingKind::kLinear:
      h = lam + (1.0 - lam) * frac;
      break;
    case PacingKind::kRoot:
      h = std::sqrt(lam * lam + (1.0 - lam * lam) * frac);
      break;
    case PacingKind::kGeometric:
      h = std::exp2(std::log2(lam) - std::log2(lam) * frac);
      break;
  }
  return std::min(1.0, h);
}

std::vector<std::size_t> subset_at(const DifficultyProfile& profile, const PacingConfig& cfg, int t) {
  const std::size_t n = profile.order.size();
  // 1e-9 slack so that e.g. 0.6 * 10 does not round up to 7.
  const double want = std::ceil(pacing(cfg, t) * static_cast<double>(n) - 1e-9);
  const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(want), std::min<std::size_t>(1, n), n);
  return {profile.order.begin(), profile.order.begin() + static_cast<std::ptrdiff_t>(count)};
}

}  // namespace geom
