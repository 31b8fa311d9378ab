#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "geom/autodiff.hpp"
#include "geom/sparse.hpp"

namespace geom {

enum class Split : std::uint8_t { kNone, kTrain, kVal, kTest };

const char* split_token(Split s);

// Immutable labeled graph. The adjacency stores each undirected edge in both
// directions with unit weight, sorted column indices, and no self-loops.
class GraphDataset {
 public:
  GraphDataset(Matrix features, CsrMatrix adjacency, std::vector<int> labels,
               std::vector<Split> splits, int num_classes);

  std::size_t num_nodes() const { return labels_.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features_.cols()); }
  int num_classes() const { return num_classes_; }
  std::size_t num_edges() const { return adjacency_.nnz() / 2; }

  const Matrix& features() const { return features_; }
  const CsrMatrix& adjacency() const { return adjacency_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Split>& splits() const { return splits_; }

  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> train_indices() const { return indices(Split::kTrain); }
  std::vector<std::size_t> val_indices() const { return indices(Split::kVal); }
  std::vector<std::size_t> test_indices() const { return indices(Split::kTest); }

  // Neighbors of node i (excluding i).
  std::span<const std::uint32_t> neighbors(std::size_t i) const;

 private:
  Matrix features_;
  CsrMatrix adjacency_;
  std::vector<int> labels_;
  std::vector<Split> splits_;
  int num_classes_;
};

// Builds a symmetric, deduplicated, loop-free unit adjacency from an edge list.
CsrMatrix adjacency_from_edges(std::size_t num_nodes,
                               const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges);

// Reads features.csv, edges.csv, labels.csv and splits.csv from `dir`.
// When num_classes is given, labels >= num_classes are rejected; otherwise
// the class count is max(label) + 1.
GraphDataset load_graph(const std::filesystem::path& dir, std::optional<int> num_classes = {});
void save_graph(const GraphDataset& g, const std::filesystem::path& dir);

// D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.
struct NormalizedAdjacency {
  std::shared_ptr<const ad::SparseOperand> op;

  const CsrMatrix& matrix() const { return op->matrix; }
};

NormalizedAdjacency normalize_adjacency(const GraphDataset& g);

struct SbmConfig {
  std::size_t nodes_per_class = 200;
  int num_classes = 3;
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t feature_dim = 32;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Stochastic block model with noisy one-hot class centroids as features and a
// stratified 20/20/60 train/val/test split.
GraphDataset generate_sbm(const SbmConfig& cfg);

// Mean over nodes with at least one neighbor of the fraction of neighbors
// sharing the node's label.
double edge_homophily(const GraphDataset& g);

}  // namespace geom
