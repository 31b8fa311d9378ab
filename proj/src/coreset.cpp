#include <limits>
#include <random>

#include "geom/errors.hpp"
#include "geom/evaluator.hpp"

namespace geom {

CoresetMethod parse_coreset_method(const std::string& name) {
  if (name == "random") return CoresetMethod::kRandom;
  if (name == "herding") return CoresetMethod::kHerding;
  if (name == "kcenter") return CoresetMethod::kKCenter;
  throw ConfigError("unknown coreset method '" + name + "' (random, herding, kcenter)");
}

const char* coreset_method_name(CoresetMethod method) {
  switch (method) {
    case CoresetMethod::kRandom: return "random";
    case CoresetMethod::kHerding: return "herding";
    case CoresetMethod::kKCenter: return "kcenter";
  }
  return "random";
}

std::vector<std::size_t> herding_select(const Matrix& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k > n) throw ContractError("herding_select: k exceeds the number of points");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(x.cols());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picked;
  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (mean - (running + x.row(static_cast<Eigen::Index>(i))) / static_cast<double>(step + 1)).norm();
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    taken[best] = 1;
    running += x.row(static_cast<Eigen::Index>(best));
    picked.push_back(best);
  }
  return picked;
}

std::vector<std::size_t> kcenter_select(const Matrix& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k > n) throw ContractError("kcenter_select: k exceeds the number of points");
  std::vector<std::size_t> picked;
  if (k == 0) return picked;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  std::size_t first = 0;
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (x.row(static_cast<Eigen::Index>(i)) - mean).norm();
    if (d < nearest) {
      nearest = d;
      first = i;
    }
  }
  std::vector<double> cover(n);
  const auto add = [&](std::size_t c) {
    picked.push_back(c);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(c))).norm();
      cover[i] = picked.size() == 1 ? d : std::min(cover[i], d);
    }
  };
  add(first);
  while (picked.size() < k) {
    std::size_t far = 0;
    double far_dist = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (cover[i] > far_dist) {
        far_dist = cover[i];
        far = i;
      }
    }
    add(far);
  }
  return picked;
}

CondensedSet coreset(const GraphDataset& g, double ratio, CoresetMethod method, std::uint64_t seed,
                     double inner_lr) {
  if (!(inner_lr > 0.0)) throw ConfigError("coreset: inner learning rate must be > 0");
  const auto alloc = class_allocation(g, ratio);
  const int classes = g.num_classes();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(classes));
  for (auto i : g.train_indices()) members[static_cast<std::size_t>(g.labels()[i])].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    auto pool = members[static_cast<std::size_t>(c)];
    const auto k = alloc[static_cast<std::size_t>(c)];
    std::vector<std::size_t> chosen;
    if (method == CoresetMethod::kRandom) {
      std::shuffle(pool.begin(), pool.end(), rng);
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      Matrix xc(static_cast<Eigen::Index>(pool.size()), g.features().cols());
      for (std::size_t r = 0; r < pool.size(); ++r) {
        xc.row(static_cast<Eigen::Index>(r)) = g.features().row(static_cast<Eigen::Index>(pool[r]));
      }
      const auto local = method == CoresetMethod::kHerding ? herding_select(xc, k) : kcenter_select(xc, k);
      for (auto r : local) chosen.push_back(pool[r]);
    }
    for (auto i : chosen) {
      rows.push_back(i);
      labels.push_back(c);
    }
  }
  CondensedSet s;
  s.num_classes = classes;
  s.inner_lr = inner_lr;
  s.hard_labels = std::move(labels);
  s.features.resize(static_cast<Eigen::Index>(rows.size()), g.features().cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s.features.row(static_cast<Eigen::Index>(r)) = g.features().row(static_cast<Eigen::Index>(rows[r]));
  }
  s.validate();
  return s;
}

}  // namespace geom
