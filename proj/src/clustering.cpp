#include <algorithm>
#include <limits>
#include <map>

#include "geom/errors.hpp"
#include "geom/evaluator.hpp"

namespace geom {

ClusteringScores clustering_metrics(const Matrix& x, const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) {
    throw DimensionError("clustering_metrics: " + std::to_string(n) + " points but " +
                         std::to_string(labels.size()) + " labels");
  }
  std::map<int, std::size_t> index;
  for (int y : labels) index.emplace(y, 0);
  if (index.size() < 2) throw MetricError("clustering_metrics: need at least 2 classes");
  std::size_t k = 0;
  for (auto& [label, id] : index) id = k++;
  std::vector<std::size_t> cluster(n);
  std::vector<std::size_t> size(k, 0);
  for (std::size_t i = 0; i < n; ++i) ++size[cluster[i] = index[labels[i]]];
  for (const auto& [label, id] : index) {
    if (size[id] < 2) throw MetricError("clustering_metrics: class " + std::to_string(label) + " has a single point");
  }

  Matrix centroid = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
  for (std::size_t i = 0; i < n; ++i) centroid.row(static_cast<Eigen::Index>(cluster[i])) += x.row(static_cast<Eigen::Index>(i));
  for (std::size_t c = 0; c < k; ++c) centroid.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(size[c]);

  ClusteringScores out;

  // Silhouette: a_i over the n_c - 1 other members, b_i the nearest other cluster.
  std::vector<double> dist_sum(k);
  double sc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist_sum[cluster[j]] += (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
    }
    const std::size_t own = cluster[i];
    const double a = dist_sum[own] / static_cast<double>(size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, dist_sum[c] / static_cast<double>(size[c]));
    }
    const double m = std::max(a, b);
    sc += m > 0.0 ? (b - a) / m : 0.0;
  }
  out.silhouette = sc / static_cast<double>(n);

  // Davies-Bouldin with mean distance to centroid as the scatter.
  std::vector<double> scatter(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    scatter[cluster[i]] += (x.row(static_cast<Eigen::Index>(i)) - centroid.row(static_cast<Eigen::Index>(cluster[i]))).norm();
  }
  for (std::size_t c = 0; c < k; ++c) scatter[c] /= static_cast<double>(size[c]);
  double db = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double worst = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      const double sep = (centroid.row(static_cast<Eigen::Index>(c)) - centroid.row(static_cast<Eigen::Index>(o))).norm();
      if (sep == 0.0) throw MetricError("clustering_metrics: two classes share a centroid");
      worst = std::max(worst, (scatter[c] + scatter[o]) / sep);
    }
    db += worst;
  }
  out.davies_bouldin = db / static_cast<double>(k);

  // Calinski-Harabasz: between / within dispersion, scaled by degrees of freedom.
  const Eigen::RowVectorXd mean = x.colwise().mean();
  double between = 0.0;
  double within = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    between += static_cast<double>(size[c]) * (centroid.row(static_cast<Eigen::Index>(c)) - mean).squaredNorm();
  }
  for (std::size_t i = 0; i < n; ++i) {
    within += (x.row(static_cast<Eigen::Index>(i)) - centroid.row(static_cast<Eigen::Index>(cluster[i]))).squaredNorm();
  }
  out.calinski_harabasz = within == 0.0
                              ? 1.0
                              : between * static_cast<double>(n - k) / (within * static_cast<double>(k - 1));
  return out;
}

}  // namespace geom
