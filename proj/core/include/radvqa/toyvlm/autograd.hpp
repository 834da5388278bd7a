#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace radvqa::toyvlm {

using Matrix = Eigen::MatrixXd;
/// true = key visible to the query.
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode autodiff over dense matrices. Nodes are appended in
/// evaluation order, so backward is a single reverse sweep. A tape built
/// with grad disabled is a plain evaluator.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Matrix v);
  /// Leaf bound to a parameter; it requires grad only when the tape records
  /// gradients and the parameter is trainable.
  Var param(const Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target; zero-sized when none flowed.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(target)/d(target) = 1 for a 1×1 target and sweeps backwards.
  void backward(Var target);

  /// Adds each trainable parameter leaf's gradient into `grad_of(name)`.
  void accumulate(const std::function<Matrix&(const std::string&)>& grad_of) const;

  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(Matrix value, const std::vector<Var>& parents, BackwardFn backward);
  /// Gradient buffer of a node, allocated as zeros on first use.
  Matrix& grad_buffer(std::size_t id);
  const Matrix& node_grad(std::size_t id) const { return nodes_[id].grad; }
  const Matrix& node_value(std::size_t id) const { return nodes_[id].value; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    const std::string* param_name = nullptr;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1×m row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// tanh approximation of GELU.
Var gelu(Var a);
/// Per-row normalization with 1×m gain and bias.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
/// Rows of `table` selected by ids (embedding lookup).
Var gather_rows(Var table, const std::vector<int>& ids);
/// Multi-head scaled dot-product attention. q, k, v are seq × d with heads
/// laid out as contiguous column blocks. Masked keys get zero probability;
/// every row must keep at least one visible key. When `probs` is non-null it
/// receives one seq × seq probability matrix per head.
Var attention(Var q, Var k, Var v, int n_heads, const Mask& mask, std::vector<Matrix>* probs = nullptr);
/// Mean over rows of the cross-entropy against `targets`, with label
/// smoothing ε mixing the one-hot target with the uniform distribution.
Var cross_entropy(Var logits, const std::vector<int>& targets, double label_smoothing = 0.0);

/// Row-wise log-softmax, numerically stable.
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace radvqa::toyvlm
