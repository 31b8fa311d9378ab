#include "geom/models.hpp"

#include <cmath>
#include <random>

#include "geom/errors.hpp"

namespace geom {

Arch parse_arch(const std::string& name) {
  if (name == "gcn2" || name == "gcn") return Arch::kGcn2;
  if (name == "sgc2" || name == "sgc") return Arch::kSgc2;
  if (name == "mlp2" || name == "mlp") return Arch::kMlp2;
  throw ConfigError("unknown architecture '" + name + "' (gcn2, sgc2, mlp2)");
}

const char* arch_name(Arch arch) {
  switch (arch) {
    case Arch::kGcn2: return "gcn2";
    case Arch::kSgc2: return "sgc2";
    case Arch::kMlp2: return "mlp2";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) {
    throw ConfigError("model: layer widths must be >= 1 (" + describe() + ")");
  }
  if (static_cast<std::uint32_t>(arch) > 2) throw ConfigError("model: unknown architecture id");
}

bool ModelSpec::same_shape(const ModelSpec& other) const {
  return arch == other.arch && in_dim == other.in_dim && hidden_dim == other.hidden_dim &&
         out_dim == other.out_dim;
}

std::string ModelSpec::describe() const {
  return std::string(arch_name(arch)) + "(in=" + std::to_string(in_dim) +
         ", hidden=" + std::to_string(hidden_dim) + ", out=" + std::to_string(out_dim) + ")";
}

std::vector<ParamBlock> parameter_layout(const ModelSpec& spec) {
  const auto in = static_cast<Eigen::Index>(spec.in_dim);
  const auto hid = static_cast<Eigen::Index>(spec.hidden_dim);
  const auto out = static_cast<Eigen::Index>(spec.out_dim);
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  const auto push = [&](const char* name, Eigen::Index r, Eigen::Index c) {
    blocks.push_back({name, r, c, offset});
    offset += static_cast<std::size_t>(r * c);
  };
  if (spec.arch == Arch::kSgc2) {
    push("W", in, out);
    push("b", 1, out);
  } else {
    push("W1", in, hid);
    push("b1", 1, hid);
    push("W2", hid, out);
    push("b2", 1, out);
  }
  return blocks;
}

std::size_t parameter_count(const ModelSpec& spec) {
  const auto blocks = parameter_layout(spec);
  const auto& last = blocks.back();
  return last.offset + static_cast<std::size_t>(last.rows * last.cols);
}

std::vector<Matrix> unflatten(const ModelSpec& spec, const ParameterVector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count(spec)) {
    throw DimensionError("unflatten: " + std::to_string(flat.size()) + " values for " +
                         spec.describe());
  }
  std::vector<Matrix> out;
  for (const auto& b : parameter_layout(spec)) {
    out.emplace_back(Eigen::Map<const Matrix>(flat.data() + b.offset, b.rows, b.cols));
  }
  return out;
}

ParameterVector flatten(const ModelSpec& spec, std::span<const Matrix> blocks) {
  const auto layout = parameter_layout(spec);
  if (blocks.size() != layout.size()) throw DimensionError("flatten: wrong number of blocks");
  ParameterVector flat(static_cast<Eigen::Index>(parameter_count(spec)));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (blocks[i].rows() != layout[i].rows || blocks[i].cols() != layout[i].cols) {
      throw DimensionError("flatten: block " + layout[i].name + " has the wrong shape");
    }
    Eigen::Map<Matrix>(flat.data() + layout[i].offset, layout[i].rows, layout[i].cols) = blocks[i];
  }
  return flat;
}

ParameterVector init_params(const ModelSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  ParameterVector flat = ParameterVector::Zero(static_cast<Eigen::Index>(parameter_count(spec)));
  for (const auto& b : parameter_layout(spec)) {
    if (b.rows == 1) continue;  // biases stay zero
    const double bound = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index k = 0; k < b.rows * b.cols; ++k) {
      flat(static_cast<Eigen::Index>(b.offset) + k) = u(rng);
    }
  }
  return flat;
}

namespace {

ad::Var propagate(const ad::Var& h, const NormalizedAdjacency* adjacency) {
  return adjacency ? ad::spmm(adjacency->op, h) : h;
}

ad::Var block(const ad::Var& theta, const ParamBlock& b) {
  return ad::slice(theta, b.offset, b.rows, b.cols);
}

}  // namespace

ad::Var forward(const ModelSpec& spec, const ad::Var& theta, const ad::Var& x,
                const NormalizedAdjacency* adjacency) {
  if (static_cast<std::size_t>(x.cols()) != spec.in_dim) {
    throw DimensionError("forward: features have " + std::to_string(x.cols()) +
                         " columns, model expects " + std::to_string(spec.in_dim));
  }
  if (static_cast<std::size_t>(theta.rows()) != parameter_count(spec) || theta.cols() != 1) {
    throw DimensionError("forward: parameter vector " + theta.shape() + " does not fit " +
                         spec.describe());
  }
  if (adjacency && static_cast<Eigen::Index>(adjacency->matrix().rows) != x.rows()) {
    throw DimensionError("forward: adjacency has " + std::to_string(adjacency->matrix().rows) +
                         " nodes, features have " + std::to_string(x.rows()) + " rows");
  }
  const auto layout = parameter_layout(spec);
  switch (spec.arch) {
    case Arch::kGcn2: {
      ad::Var h = ad::relu(ad::add_row(propagate(ad::matmul(x, block(theta, layout[0])), adjacency),
                                       block(theta, layout[1])));
      return ad::add_row(propagate(ad::matmul(h, block(theta, layout[2])), adjacency),
                         block(theta, layout[3]));
    }
    case Arch::kSgc2: {
      ad::Var smoothed = propagate(propagate(x, adjacency), adjacency);
      return ad::add_row(ad::matmul(smoothed, block(theta, layout[0])), block(theta, layout[1]));
    }
    case Arch::kMlp2: {
      ad::Var h = ad::relu(ad::add_row(ad::matmul(x, block(theta, layout[0])), block(theta, layout[1])));
      return ad::add_row(ad::matmul(h, block(theta, layout[2])), block(theta, layout[3]));
    }
  }
  throw ContractError("forward: unknown architecture");
}

Matrix predict(const ModelSpec& spec, const ParameterVector& theta, const Matrix& x,
               const NormalizedAdjacency* adjacency) {
  ad::Tape tape;
  return forward(spec, tape.constant(theta), tape.constant(x), adjacency).value();
}

ad::Var cross_entropy(const ad::Var& logits, const ad::Var& targets, double normalizer) {
  return ad::scale(ad::sum(ad::mul(targets, ad::row_log_softmax(logits))), -1.0 / normalizer);
}

Matrix one_hot_rows(std::size_t n, int num_classes, const std::vector<int>& labels,
                    std::span<const std::size_t> rows) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(n), num_classes);
  for (auto r : rows) t(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  return t;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels,
                std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (auto r : rows) {
    Eigen::Index best = 0;
    logits.row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
    correct += static_cast<int>(best) == labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

LossAndGrad loss_and_grad(const ModelSpec& spec, const ParameterVector& theta, const Matrix& x,
                          const NormalizedAdjacency* adjacency, const Matrix& targets,
                          double normalizer) {
  ad::Tape tape;
  ad::Var th = tape.variable(theta);
  ad::Var loss = cross_entropy(forward(spec, th, tape.constant(x), adjacency),
                               tape.constant(targets), normalizer);
  ad::Var g = tape.grad(loss, std::span<const ad::Var>(&th, 1))[0];
  return {loss.scalar(), g.value()};
}

}  // namespace geom
