#include "geom/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "geom/csv.hpp"
#include "geom/errors.hpp"

namespace geom {

namespace fs = std::filesystem;

const char* split_token(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: return "none";
  }
  return "none";
}

GraphDataset::GraphDataset(Matrix features, CsrMatrix adjacency, std::vector<int> labels,
                           std::vector<Split> splits, int num_classes)
    : features_(std::move(features)),
      adjacency_(std::move(adjacency)),
      labels_(std::move(labels)),
      splits_(std::move(splits)),
      num_classes_(num_classes) {
  const std::size_t n = labels_.size();
  if (static_cast<std::size_t>(features_.rows()) != n || splits_.size() != n ||
      adjacency_.rows != n || adjacency_.cols != n) {
    throw ContractError("graph: features, adjacency, labels and splits disagree on node count");
  }
  if (num_classes_ < 1) throw ContractError("graph: need at least one class");
  if (!features_.allFinite()) throw ContractError("graph: features contain NaN or Inf");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes_) {
      throw ContractError("graph: label " + std::to_string(labels_[i]) + " of node " +
                          std::to_string(i) + " outside [0, " + std::to_string(num_classes_) +
                          ")");
    }
    for (std::size_t k = adjacency_.row_ptr[i]; k < adjacency_.row_ptr[i + 1]; ++k) {
      if (adjacency_.col_idx[k] == i) throw ContractError("graph: stored self-loop");
      if (k > adjacency_.row_ptr[i] && adjacency_.col_idx[k] <= adjacency_.col_idx[k - 1]) {
        throw ContractError("graph: adjacency rows must be sorted without duplicates");
      }
    }
  }
  if (!adjacency_.is_symmetric(0.0)) throw ContractError("graph: adjacency is not symmetric");
}

std::vector<std::size_t> GraphDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits_.size(); ++i)
    if (splits_[i] == s) out.push_back(i);
  return out;
}

std::span<const std::uint32_t> GraphDataset::neighbors(std::size_t i) const {
  return {adjacency_.col_idx.data() + adjacency_.row_ptr[i],
          adjacency_.row_ptr[i + 1] - adjacency_.row_ptr[i]};
}

CsrMatrix adjacency_from_edges(std::size_t num_nodes,
                               const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
  std::vector<std::vector<std::uint32_t>> rows(num_nodes);
  for (const auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) throw ContractError("edge endpoint out of range");
    if (u == v) continue;
    rows[u].push_back(v);
    rows[v].push_back(u);
  }
  CsrMatrix a;
  a.rows = a.cols = num_nodes;
  a.row_ptr.assign(1, 0);
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    a.col_idx.insert(a.col_idx.end(), r.begin(), r.end());
    a.row_ptr.push_back(a.col_idx.size());
  }
  a.values.assign(a.col_idx.size(), 1.0);
  return a;
}

GraphDataset load_graph(const fs::path& dir, std::optional<int> num_classes) {
  if (!fs::is_directory(dir)) throw LoadError("graph bundle directory not found: " + dir.string());
  for (const char* name : {"features.csv", "edges.csv", "labels.csv", "splits.csv"}) {
    if (!fs::exists(dir / name)) throw LoadError("missing file " + (dir / name).string());
  }
  Matrix features = csv::read_matrix(dir / "features.csv");
  const std::size_t n = static_cast<std::size_t>(features.rows());

  const fs::path labels_path = dir / "labels.csv";
  std::vector<int> labels = csv::read_int_column(labels_path);
  if (labels.size() != n) {
    throw LoadError(labels_path.string() + ": " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(n) + " feature rows");
  }
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) {
      throw LoadError(labels_path.string() + ":" + std::to_string(i + 1) + ": negative label");
    }
    if (num_classes && labels[i] >= *num_classes) {
      throw LoadError(labels_path.string() + ":" + std::to_string(i + 1) + ": label " +
                      std::to_string(labels[i]) + " >= class count " +
                      std::to_string(*num_classes));
    }
    max_label = std::max(max_label, labels[i]);
  }
  const int classes = num_classes.value_or(max_label + 1);

  const fs::path splits_path = dir / "splits.csv";
  const auto split_lines = csv::read_lines(splits_path);
  if (split_lines.size() != n) {
    throw LoadError(splits_path.string() + ": " + std::to_string(split_lines.size()) +
                    " rows for " + std::to_string(n) + " nodes");
  }
  std::vector<Split> splits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = csv::split(split_lines[i]);
    const std::string tok = fields.size() == 1 ? fields[0] : std::string();
    if (tok == "train") {
      splits[i] = Split::kTrain;
    } else if (tok == "val") {
      splits[i] = Split::kVal;
    } else if (tok == "test") {
      splits[i] = Split::kTest;
    } else if (tok == "none") {
      splits[i] = Split::kNone;
    } else {
      throw LoadError(splits_path.string() + ":" + std::to_string(i + 1) + ": bad split token '" +
                      split_lines[i] + "'");
    }
  }

  const fs::path edges_path = dir / "edges.csv";
  const auto edge_lines = csv::read_lines(edges_path);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(edge_lines.size());
  for (std::size_t i = 0; i < edge_lines.size(); ++i) {
    const auto fields = csv::split(edge_lines[i]);
    if (fields.size() != 2) {
      throw LoadError(edges_path.string() + ":" + std::to_string(i + 1) +
                      ": expected 'src,dst', found " + std::to_string(fields.size()) + " fields");
    }
    const long long u = csv::parse_int(fields[0], edges_path, i + 1);
    const long long v = csv::parse_int(fields[1], edges_path, i + 1);
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw LoadError(edges_path.string() + ":" + std::to_string(i + 1) + ": node id out of range");
    }
    edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
  }
  return GraphDataset(std::move(features), adjacency_from_edges(n, edges), std::move(labels),
                      std::move(splits), classes);
}

void save_graph(const GraphDataset& g, const fs::path& dir) {
  fs::create_directories(dir);
  csv::write_matrix(dir / "features.csv", g.features());
  csv::write_int_column(dir / "labels.csv", g.labels());
  std::string splits;
  for (Split s : g.splits()) {
    splits += split_token(s);
    splits += '\n';
  }
  csv::write_text(dir / "splits.csv", splits);
  std::string edges;
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    for (std::uint32_t v : g.neighbors(u)) {
      if (v <= u) continue;
      edges += std::to_string(u) + "," + std::to_string(v) + "\n";
    }
  }
  csv::write_text(dir / "edges.csv", edges);
}

NormalizedAdjacency normalize_adjacency(const GraphDataset& g) {
  const CsrMatrix& a = g.adjacency();
  const std::size_t n = g.num_nodes();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(a.row_ptr[i + 1] - a.row_ptr[i] + 1));
  }
  CsrMatrix out;
  out.rows = out.cols = n;
  out.row_ptr.assign(1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool placed_self = false;
    const auto place_self = [&] {
      out.col_idx.push_back(static_cast<std::uint32_t>(i));
      out.values.push_back(inv_sqrt[i] * inv_sqrt[i]);
      placed_self = true;
    };
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const std::uint32_t j = a.col_idx[k];
      if (!placed_self && j > i) place_self();
      out.col_idx.push_back(j);
      out.values.push_back(inv_sqrt[i] * inv_sqrt[j]);
    }
    if (!placed_self) place_self();
    out.row_ptr.push_back(out.col_idx.size());
  }
  return NormalizedAdjacency{std::make_shared<const ad::SparseOperand>(std::move(out))};
}

void SbmConfig::validate() const {
  if (num_classes < 1) throw ConfigError("sbm: num_classes must be >= 1");
  if (nodes_per_class < 2) throw ConfigError("sbm: nodes_per_class must be >= 2");
  if (!(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0)) {
    throw ConfigError("sbm: edge probabilities must lie in [0, 1]");
  }
  if (!(p_in > p_out)) throw ConfigError("sbm: p_in must exceed p_out");
  if (feature_dim < static_cast<std::size_t>(num_classes)) {
    throw ConfigError("sbm: feature_dim must be >= num_classes for one-hot centroids");
  }
  if (!(feature_noise >= 0.0) || !std::isfinite(feature_noise)) {
    throw ConfigError("sbm: feature_noise must be a finite non-negative number");
  }
}

GraphDataset generate_sbm(const SbmConfig& cfg) {
  cfg.validate();
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  const std::size_t n = cfg.nodes_per_class * classes;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / cfg.nodes_per_class);

  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? cfg.p_in : cfg.p_out;
      if (unit(rng) < p) edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
    }
  }

  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.feature_dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
      const double centroid = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          centroid + cfg.feature_noise * noise(rng);
    }
  }

  std::vector<Split> splits(n, Split::kTest);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> members(cfg.nodes_per_class);
    for (std::size_t k = 0; k < cfg.nodes_per_class; ++k) members[k] = c * cfg.nodes_per_class + k;
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(members.size())));
    const auto n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      splits[members[k]] = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
    }
  }
  return GraphDataset(std::move(features), adjacency_from_edges(n, edges), std::move(labels),
                      std::move(splits), cfg.num_classes);
}

double edge_homophily(const GraphDataset& g) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const auto nb = g.neighbors(i);
    if (nb.empty()) continue;
    std::size_t same = 0;
    for (auto j : nb) same += g.labels()[j] == g.labels()[i];
    total += static_cast<double>(same) / static_cast<double>(nb.size());
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

}  // namespace geom
