#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geom/autodiff.hpp"
#include "geom/graph.hpp"

namespace geom {

enum class Arch : std::uint32_t { kGcn2 = 0, kSgc2 = 1, kMlp2 = 2 };

Arch parse_arch(const std::string& name);
const char* arch_name(Arch arch);

struct ModelSpec {
  Arch arch = Arch::kGcn2;
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 64;
  std::size_t out_dim = 0;
  std::uint64_t seed = 0;

  void validate() const;
  // Architecture and widths only; seeds may differ between experts.
  bool same_shape(const ModelSpec& other) const;
  std::string describe() const;
};

struct ParamBlock {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  std::size_t offset;
};

// Blocks in flat order: gcn2/mlp2 = W1, b1, W2, b2; sgc2 = W, b. Each block
// is stored column-major.
std::vector<ParamBlock> parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

using ParameterVector = Vector;

std::vector<Matrix> unflatten(const ModelSpec& spec, const ParameterVector& flat);
ParameterVector flatten(const ModelSpec& spec, std::span<const Matrix> blocks);

// Glorot-uniform weights and zero biases, deterministic in spec.seed.
ParameterVector init_params(const ModelSpec& spec);

// Logits for every row of x. A null adjacency means identity propagation
// (structure-free data); mlp2 ignores the adjacency.
ad::Var forward(const ModelSpec& spec, const ad::Var& theta, const ad::Var& x,
                const NormalizedAdjacency* adjacency);

// Plain evaluation without gradients.
Matrix predict(const ModelSpec& spec, const ParameterVector& theta, const Matrix& x,
               const NormalizedAdjacency* adjacency);

// -sum(targets * log_softmax(logits)) / normalizer. Rows of `targets` that are
// all zero drop out, which is how node subsets are selected.
ad::Var cross_entropy(const ad::Var& logits, const ad::Var& targets, double normalizer);

// N x C target matrix with one-hot rows for `rows` and zeros elsewhere.
Matrix one_hot_rows(std::size_t n, int num_classes, const std::vector<int>& labels,
                    std::span<const std::size_t> rows);

double accuracy(const Matrix& logits, const std::vector<int>& labels,
                std::span<const std::size_t> rows);

struct LossAndGrad {
  double loss;
  ParameterVector grad;
};

// Loss and parameter gradient of cross_entropy(forward(...), targets).
LossAndGrad loss_and_grad(const ModelSpec& spec, const ParameterVector& theta, const Matrix& x,
                          const NormalizedAdjacency* adjacency, const Matrix& targets,
                          double normalizer);

}  // namespace geom
