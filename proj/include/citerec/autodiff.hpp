#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Every op appends a node holding its forward value and a closure that
// pushes the node's gradient into its inputs. Nodes are only ever appended,
// so a reverse sweep over the node list is a valid topological order.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace citerec::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// A trainable tensor and its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix init)
      : name(std::move(n)), value(std::move(init)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  /// With `record_gradients == false` no backward closures are stored; use
  /// for inference on frozen weights.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const { return recording_; }

  Var constant(Matrix value);
  Var scalar_constant(double v);

  /// Leaf bound to a parameter. Repeated calls for the same parameter return
  /// the same node. backward() adds into `p.grad`, so it needs exclusive
  /// access to the parameter set.
  Var param(const Parameter& p);

  /// Reverse sweep from a 1x1 node. Throws if the tape is empty, not
  /// recording, or `loss` is not a scalar on this tape.
  void backward(Var loss);

  [[nodiscard]] const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref != nullptr ? *n.ref : n.value;
  }
  /// Gradient of the last backward() sweep w.r.t. node `v` (zeros if unreached).
  [[nodiscard]] Matrix grad(Var v) const;
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Op-construction interface used by the ops in ops.cpp.
  Var push(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn);
  [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  Matrix& grad_ref(std::size_t id);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Ops. Shapes are checked and violations throw std::invalid_argument.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Broadcast a 1xC row over every row of an RxC matrix.
Var add_row(Var x, Var row);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var mul_elem(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
/// max(x, 0) elementwise, with subgradient 0 at the kink.
Var hinge(Var x);
Var transpose(Var x);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, Index begin, Index count);
Var slice_rows(Var x, Index begin, Index count);
Var sum(Var x);
/// Mean of a list of 1x1 nodes, summed in list order.
Var mean_scalars(std::span<const Var> xs);
/// Row-wise dot product of two 1xC rows, giving 1x1.
Var dot(Var a, Var b);
/// Each row divided by its L2 norm.
Var l2_normalize_rows(Var x);

/// Row-wise softmax. `key_mask[j] == false` excludes column j; rows with
/// `row_mask[i] == false` become all-zero. Empty masks mean "all active".
/// Uses max-subtraction.
Var softmax_rows(Var x, const std::vector<bool>& key_mask = {},
                 const std::vector<bool>& row_mask = {});

/// Row-wise layer normalization with learned gain and bias (1xC each).
Var layer_norm_rows(Var x, Var gain, Var bias, double eps);

}  // namespace citerec::nn
