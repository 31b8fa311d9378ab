#pragma once

// Tape-based reverse-mode differentiation over dense double matrices.
//
// Every operation appends a node to the Tape owned by its operands, so node
// ids are a topological order by construction. grad() walks the tape
// backwards from the loss node and visits each reachable node once. With
// create_graph=true the adjoint computation is itself recorded on the same
// tape, which is what makes gradients of gradients (meta-gradients through
// unrolled SGD) possible.
//
// A Tape and the Vars that refer to it belong to a single thread.

#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geom/sparse.hpp"

namespace geom::ad {

enum class Op {
  kLeaf,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kScalarMul,
  kRelu,
  kExp,
  kLog,
  kSum,
  kExpand,
  kAddRow,
  kColSum,
  kBroadcastRows,
  kRowSum,
  kBroadcastCols,
  kRowLogSoftmax,
  kSpmm,
  kSlice,
  kEmbed,
};

const char* op_name(Op op);

// Constant sparse left operand, stored with its transpose for the adjoint.
struct SparseOperand {
  CsrMatrix matrix;
  CsrMatrix transposed;

  explicit SparseOperand(CsrMatrix m);
};

class Tape;

// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Matrix& value() const;
  bool requires_grad() const;
  // Gradient accumulated by Tape::backward, if any.
  const std::optional<Matrix>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::string shape() const;
  // Value of a 1x1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct Node {
  Op op = Op::kLeaf;
  Matrix value;
  std::optional<Matrix> grad;
  bool requires_grad = false;
  Var inputs[2];
  double scalar = 0.0;
  std::size_t offset = 0;
  std::size_t extent = 0;
  std::shared_ptr<const SparseOperand> sparse;
  bool transposed = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var variable(Matrix value);
  Var constant(Matrix value);

  Var at(std::size_t id);
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  bool recording() const { return recording_; }

  // Gradients of a scalar loss with respect to `wrt`. Inputs the loss does
  // not depend on get a zero matrix of their shape.
  std::vector<Var> grad(const Var& loss, std::span<const Var> wrt, bool create_graph = false);

  // Accumulates d(loss)/d(leaf) into Var::grad() of every requires_grad leaf.
  void backward(const Var& loss);

  // Used by the free operations below.
  Var record(Op op, Matrix value, const Var& a, const Var& b = Var{});
  Node& mutable_node(std::size_t id) { return nodes_[id]; }

 private:
  friend class RecordingGuard;
  std::vector<std::optional<Var>> propagate(const Var& loss, std::span<const Var> wrt,
                                            bool create_graph);

  std::deque<Node> nodes_;  // stable references across appends
  bool recording_ = true;
};

// Temporarily switches recording on or off.
class RecordingGuard {
 public:
  RecordingGuard(Tape& tape, bool recording) : tape_(tape), saved_(tape.recording_) {
    tape_.recording_ = recording;
  }
  ~RecordingGuard() { tape_.recording_ = saved_; }
  RecordingGuard(const RecordingGuard&) = delete;
  RecordingGuard& operator=(const RecordingGuard&) = delete;

 private:
  Tape& tape_;
  bool saved_;
};

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// s is 1x1; multiplies every entry of a by it.
Var scalar_mul(const Var& s, const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sum(const Var& a);
// Broadcast a 1x1 node to rows x cols.
Var expand(const Var& s, Eigen::Index rows, Eigen::Index cols);
// a (r x c) + row vector b (1 x c) added to every row.
Var add_row(const Var& a, const Var& b);
Var col_sum(const Var& a);
Var broadcast_rows(const Var& row, Eigen::Index rows);
Var row_sum(const Var& a);
Var broadcast_cols(const Var& col, Eigen::Index cols);
Var row_log_softmax(const Var& a);
// Constant sparse matrix (or its transpose) times a.
Var spmm(const std::shared_ptr<const SparseOperand>& sparse, const Var& a, bool transposed = false);
// Reads `rows x cols` entries (column-major) starting at `offset` of a column vector.
Var slice(const Var& flat, std::size_t offset, Eigen::Index rows, Eigen::Index cols);
// Inverse of slice: places a into a zero column vector of length `total`.
Var embed(const Var& a, std::size_t offset, std::size_t total);

// Elementwise dispatch by name: add, sub, mul, div, scale, relu, exp, log.
enum class Elementwise { kAdd, kSub, kMul, kDiv, kScale, kRelu, kExp, kLog };
Var elementwise(Elementwise kind, const Var& a, const Var& b = Var{}, double factor = 1.0);

}  // namespace geom::ad
