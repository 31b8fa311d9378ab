#include "geom/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <utility>

#include "geom/errors.hpp"

namespace geom::ad {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& tape_of(const Var& a, const Var& b = Var{}) {
  if (!a.valid() && !b.valid()) throw ContractError("operation on an empty Var");
  if (a.valid() && b.valid() && &a.tape() != &b.tape()) {
    throw ContractError("operands live on different tapes");
  }
  return a.valid() ? a.tape() : b.tape();
}

void require_same_shape(const char* what, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

void require_scalar(const char* what, const Var& a) {
  if (a.rows() != 1 || a.cols() != 1) {
    throw DimensionError(std::string(what) + ": expected 1x1, got " + a.shape());
  }
}

Matrix row_log_softmax_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    const double lse = std::log((a.row(r).array() - mx).exp().sum());
    out.row(r) = (a.row(r).array() - mx - lse).matrix();
  }
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSum: return "sum";
    case Op::kExpand: return "expand";
    case Op::kAddRow: return "add_row";
    case Op::kColSum: return "col_sum";
    case Op::kBroadcastRows: return "broadcast_rows";
    case Op::kRowSum: return "row_sum";
    case Op::kBroadcastCols: return "broadcast_cols";
    case Op::kRowLogSoftmax: return "row_log_softmax";
    case Op::kSpmm: return "spmm";
    case Op::kSlice: return "slice";
    case Op::kEmbed: return "embed";
  }
  return "?";
}

SparseOperand::SparseOperand(CsrMatrix m) : matrix(std::move(m)), transposed(matrix.transpose()) {}

const Matrix& Var::value() const { return tape_->node(id_).value; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }
const std::optional<Matrix>& Var::grad() const { return tape_->node(id_).grad; }
std::string Var::shape() const { return shape_of(value()); }

double Var::scalar() const {
  require_scalar("scalar()", *this);
  return value()(0, 0);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::at(std::size_t id) {
  if (id >= nodes_.size()) throw ContractError("node id out of range");
  return Var(this, id);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, Matrix value, const Var& a, const Var& b) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad =
      recording_ && ((a.valid() && a.requires_grad()) || (b.valid() && b.requires_grad()));
  n.inputs[0] = a;
  n.inputs[1] = b;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

namespace {

// Adjoints of node `id` given its output gradient g. Written with Var
// operations so that they are recorded when the tape is recording.
void vector_jacobian(Tape& tape, std::size_t id, const Var& g, const std::vector<char>& relevant,
                     Var out[2]) {
  const Node& n = tape.node(id);
  const Var& a = n.inputs[0];
  const Var& b = n.inputs[1];
  const auto wants = [&](const Var& v) {
    return v.valid() && v.requires_grad() && relevant[v.id()];
  };
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul:
      if (wants(a)) out[0] = matmul(g, transpose(b));
      if (wants(b)) out[1] = matmul(transpose(a), g);
      break;
    case Op::kTranspose:
      if (wants(a)) out[0] = transpose(g);
      break;
    case Op::kAdd:
      out[0] = g;
      out[1] = g;
      break;
    case Op::kSub:
      out[0] = g;
      if (wants(b)) out[1] = scale(g, -1.0);
      break;
    case Op::kMul:
      if (wants(a)) out[0] = mul(g, b);
      if (wants(b)) out[1] = mul(g, a);
      break;
    case Op::kDiv:
      if (wants(a)) out[0] = div(g, b);
      if (wants(b)) out[1] = scale(div(mul(g, a), mul(b, b)), -1.0);
      break;
    case Op::kScale:
      out[0] = scale(g, n.scalar);
      break;
    case Op::kScalarMul:
      if (wants(a)) out[0] = sum(mul(g, b));
      if (wants(b)) out[1] = scalar_mul(a, g);
      break;
    case Op::kRelu: {
      Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
      out[0] = mul(g, tape.constant(std::move(mask)));
      break;
    }
    case Op::kExp:
      out[0] = mul(g, tape.at(id));
      break;
    case Op::kLog:
      out[0] = div(g, a);
      break;
    case Op::kSum:
      out[0] = expand(g, a.rows(), a.cols());
      break;
    case Op::kExpand:
      out[0] = sum(g);
      break;
    case Op::kAddRow:
      out[0] = g;
      if (wants(b)) out[1] = col_sum(g);
      break;
    case Op::kColSum:
      out[0] = broadcast_rows(g, a.rows());
      break;
    case Op::kBroadcastRows:
      out[0] = col_sum(g);
      break;
    case Op::kRowSum:
      out[0] = broadcast_cols(g, a.cols());
      break;
    case Op::kBroadcastCols:
      out[0] = row_sum(g);
      break;
    case Op::kRowLogSoftmax: {
      // dx = g - softmax(x) * rowsum(g)
      const Var softmax = exp(tape.at(id));
      out[0] = sub(g, mul(softmax, broadcast_cols(row_sum(g), a.cols())));
      break;
    }
    case Op::kSpmm:
      out[0] = spmm(n.sparse, g, !n.transposed);
      break;
    case Op::kSlice:
      out[0] = embed(g, n.offset, n.extent);
      break;
    case Op::kEmbed:
      out[0] = slice(g, n.offset, a.rows(), a.cols());
      break;
  }
}

}  // namespace

std::vector<std::optional<Var>> Tape::propagate(const Var& loss, std::span<const Var> wrt,
                                                bool create_graph) {
  if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward needs a scalar (1x1) loss, got " + loss.shape());
  }
  const std::size_t end = loss.id() + 1;
  // Restrict the sweep to nodes that depend on one of the targets; an empty
  // target list means every requires_grad leaf.
  std::vector<char> relevant(end, wrt.empty() ? 1 : 0);
  if (!wrt.empty()) {
    std::size_t first = end;
    for (const Var& w : wrt) {
      if (w.id() < end) {
        relevant[w.id()] = 1;
        first = std::min(first, w.id());
      }
    }
    for (std::size_t i = first; i < end; ++i) {
      for (const Var& input : nodes_[i].inputs) {
        if (input.valid() && input.id() < end && relevant[input.id()]) relevant[i] = 1;
      }
    }
  }
  std::vector<std::optional<Var>> grads(end);
  RecordingGuard guard(*this, create_graph);
  grads[loss.id()] = constant(Matrix::Ones(1, 1));
  for (std::size_t i = end; i-- > 0;) {
    if (!grads[i] || !nodes_[i].requires_grad || nodes_[i].op == Op::kLeaf) continue;
    const bool any_input = std::any_of(std::begin(nodes_[i].inputs), std::end(nodes_[i].inputs),
                                       [&](const Var& v) { return v.valid() && relevant[v.id()]; });
    if (!any_input) continue;
    Var local[2];
    vector_jacobian(*this, i, *grads[i], relevant, local);
    for (int k = 0; k < 2; ++k) {
      const Var& input = nodes_[i].inputs[k];
      if (!local[k].valid() || !input.valid() || !input.requires_grad()) continue;
      if (!relevant[input.id()]) continue;
      auto& slot = grads[input.id()];
      slot = slot ? add(*slot, local[k]) : local[k];
    }
  }
  return grads;
}

std::vector<Var> Tape::grad(const Var& loss, std::span<const Var> wrt, bool create_graph) {
  auto grads = propagate(loss, wrt, create_graph);
  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < grads.size() && grads[w.id()]) {
      result.push_back(*grads[w.id()]);
    } else {
      result.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return result;
}

void Tape::backward(const Var& loss) {
  auto grads = propagate(loss, {}, false);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op != Op::kLeaf || !n.requires_grad || !grads[i]) continue;
    const Matrix& g = grads[i]->value();
    if (n.grad) {
      *n.grad += g;
    } else {
      n.grad = g;
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape() + " x " + b.shape());
  }
  return t.record(Op::kMatmul, a.value() * b.value(), a, b);
}

Var transpose(const Var& a) {
  return tape_of(a).record(Op::kTranspose, a.value().transpose(), a);
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  return t.record(Op::kAdd, a.value() + b.value(), a, b);
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  return t.record(Op::kSub, a.value() - b.value(), a, b);
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a, b);
  return t.record(Op::kMul, a.value().cwiseProduct(b.value()), a, b);
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("div", a, b);
  return t.record(Op::kDiv, a.value().cwiseQuotient(b.value()), a, b);
}

Var scale(const Var& a, double factor) {
  Var out = tape_of(a).record(Op::kScale, a.value() * factor, a);
  out.tape().mutable_node(out.id()).scalar = factor;
  return out;
}

Var scalar_mul(const Var& s, const Var& a) {
  Tape& t = tape_of(s, a);
  require_scalar("scalar_mul", s);
  return t.record(Op::kScalarMul, s.value()(0, 0) * a.value(), s, a);
}

Var relu(const Var& a) {
  return tape_of(a).record(Op::kRelu, a.value().cwiseMax(0.0), a);
}

Var exp(const Var& a) {
  return tape_of(a).record(Op::kExp, a.value().array().exp().matrix(), a);
}

Var log(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& v = a.value();
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (!(v(i, j) > 0.0)) {
        throw DomainError("log: non-positive entry " + std::to_string(v(i, j)) + " at (" +
                          std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  return t.record(Op::kLog, v.array().log().matrix(), a);
}

Var sum(const Var& a) {
  Matrix s(1, 1);
  s(0, 0) = a.value().sum();
  return tape_of(a).record(Op::kSum, std::move(s), a);
}

Var expand(const Var& s, Eigen::Index rows, Eigen::Index cols) {
  require_scalar("expand", s);
  return tape_of(s).record(Op::kExpand, Matrix::Constant(rows, cols, s.value()(0, 0)), s);
}

Var add_row(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw DimensionError("add_row: " + a.shape() + " + " + b.shape());
  }
  Matrix v = a.value();
  v.rowwise() += b.value().row(0);
  return t.record(Op::kAddRow, std::move(v), a, b);
}

Var col_sum(const Var& a) {
  return tape_of(a).record(Op::kColSum, a.value().colwise().sum(), a);
}

Var broadcast_rows(const Var& row, Eigen::Index rows) {
  if (row.rows() != 1) throw DimensionError("broadcast_rows: expected a row, got " + row.shape());
  return tape_of(row).record(Op::kBroadcastRows, row.value().replicate(rows, 1), row);
}

Var row_sum(const Var& a) {
  return tape_of(a).record(Op::kRowSum, a.value().rowwise().sum(), a);
}

Var broadcast_cols(const Var& col, Eigen::Index cols) {
  if (col.cols() != 1) throw DimensionError("broadcast_cols: expected a column, got " + col.shape());
  return tape_of(col).record(Op::kBroadcastCols, col.value().replicate(1, cols), col);
}

Var row_log_softmax(const Var& a) {
  if (a.cols() < 1) throw DimensionError("row_log_softmax: no columns");
  return tape_of(a).record(Op::kRowLogSoftmax, row_log_softmax_value(a.value()), a);
}

Var spmm(const std::shared_ptr<const SparseOperand>& sparse, const Var& a, bool transposed) {
  const CsrMatrix& m = transposed ? sparse->transposed : sparse->matrix;
  if (static_cast<Eigen::Index>(m.cols) != a.rows()) {
    throw DimensionError("spmm: sparse " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                         " times " + a.shape());
  }
  Var out = tape_of(a).record(Op::kSpmm, m.multiply(a.value()), a);
  Node& n = out.tape().mutable_node(out.id());
  n.sparse = sparse;
  n.transposed = transposed;
  return out;
}

Var slice(const Var& flat, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  if (flat.cols() != 1) throw DimensionError("slice: expected a column vector, got " + flat.shape());
  const auto count = static_cast<std::size_t>(rows * cols);
  if (offset + count > static_cast<std::size_t>(flat.rows())) {
    throw DimensionError("slice: [" + std::to_string(offset) + ", " +
                         std::to_string(offset + count) + ") exceeds length " +
                         std::to_string(flat.rows()));
  }
  Matrix v = Eigen::Map<const Matrix>(flat.value().data() + offset, rows, cols);
  Var out = tape_of(flat).record(Op::kSlice, std::move(v), flat);
  Node& n = out.tape().mutable_node(out.id());
  n.offset = offset;
  n.extent = static_cast<std::size_t>(flat.rows());
  return out;
}

Var embed(const Var& a, std::size_t offset, std::size_t total) {
  const auto count = static_cast<std::size_t>(a.rows() * a.cols());
  if (offset + count > total) throw DimensionError("embed: block exceeds target length");
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(total), 1);
  Eigen::Map<Matrix>(v.data() + offset, a.rows(), a.cols()) = a.value();
  Var out = tape_of(a).record(Op::kEmbed, std::move(v), a);
  Node& n = out.tape().mutable_node(out.id());
  n.offset = offset;
  n.extent = total;
  return out;
}

Var elementwise(Elementwise kind, const Var& a, const Var& b, double factor) {
  switch (kind) {
    case Elementwise::kAdd: return add(a, b);
    case Elementwise::kSub: return sub(a, b);
    case Elementwise::kMul: return mul(a, b);
    case Elementwise::kDiv: return div(a, b);
    case Elementwise::kScale: return scale(a, factor);
    case Elementwise::kRelu: return relu(a);
    case Elementwise::kExp: return exp(a);
    case Elementwise::kLog: return log(a);
  }
  throw ContractError("unknown elementwise op");
}

}  // namespace geom::ad
