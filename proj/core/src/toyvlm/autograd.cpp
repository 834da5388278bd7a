#include "radvqa/toyvlm/autograd.hpp"

#include <cmath>
#include <limits>

#include "radvqa/common/error.hpp"

namespace radvqa::toyvlm {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix v) {
  nodes_.push_back(Node{std::move(v), Matrix(), false, nullptr, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
  const bool rg = grad_enabled_ && p.trainable;
  nodes_.push_back(Node{p.value, Matrix(), rg, nullptr, rg ? &p.name : nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, const std::vector<Var>& parents, BackwardFn backward) {
  bool rg = false;
  if (grad_enabled_) {
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr, nullptr});
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var target) {
  if (!grad_enabled_) throw Error("no_grad", "backward on a tape without gradient recording");
  if (nodes_[target.id].value.size() != 1) throw ShapeError("backward target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[target.id].requires_grad) return;
  grad_buffer(target.id).setConstant(1.0);
  for (std::size_t i = target.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
}

void Tape::accumulate(const std::function<Matrix&(const std::string&)>& grad_of) const {
  for (const auto& n : nodes_) {
    if (n.param_name && n.grad.size() != 0) grad_of(*n.param_name) += n.grad;
  }
}

namespace {

Tape& tape_of(Var a) { return *a.tape; }

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("tape_mismatch", "operands live on different tapes");
}

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul " + shape(A) + " by " + shape(B));
  Matrix out = A * B;
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a.id)) t.grad_buffer(a.id).noalias() += g * t.node_value(b.id).transpose();
    if (t.node_requires_grad(b.id)) t.grad_buffer(b.id).noalias() += t.node_value(a.id).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt " + shape(A) + " by " + shape(B) + "^T");
  Matrix out = A * B.transpose();
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a.id)) t.grad_buffer(a.id).noalias() += g * t.node_value(b.id);
    if (t.node_requires_grad(b.id)) t.grad_buffer(b.id).noalias() += g.transpose() * t.node_value(a.id);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add " + shape(a.value()) + " and " + shape(b.value()));
  }
  Matrix out = a.value() + b.value();
  return tape_of(a).push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a.id)) t.grad_buffer(a.id) += g;
    if (t.node_requires_grad(b.id)) t.grad_buffer(b.id) += g;
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row " + shape(a.value()) + " with " + shape(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return tape_of(a).push(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a.id)) t.grad_buffer(a.id) += g;
    if (t.node_requires_grad(row.id)) t.grad_buffer(row.id) += g.colwise().sum();
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return tape_of(a).push(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    t.grad_buffer(a.id) += t.node_grad(self) * s;
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var gelu(Var a) {
  constexpr double c = kGeluC;
  constexpr double k = kGeluK;
  const Matrix& x = a.value();
  Matrix th = (c * (x.array() + k * x.array().cube())).tanh().matrix();
  Matrix out = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return tape_of(a).push(std::move(out), {a}, [a, th = std::move(th)](Tape& t, std::size_t self) {
    const auto x = t.node_value(a.id).array();
    const auto d = 0.5 * (1.0 + th.array()) + 0.5 * x * (1.0 - th.array().square()) * kGeluC * (1.0 + 3.0 * kGeluK * x.square());
    t.grad_buffer(a.id).array() += t.node_grad(self).array() * d;
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Matrix& X = x.value();
  const auto m = X.cols();
  if (gamma.rows() != 1 || gamma.cols() != m || beta.rows() != 1 || beta.cols() != m) {
    throw ShapeError("layer_norm gain/bias must be 1x" + std::to_string(m));
  }
  Eigen::VectorXd mean = X.rowwise().mean();
  Matrix xc = X.colwise() - mean;
  Eigen::VectorXd inv_std = ((xc.array().square().rowwise().sum() / static_cast<double>(m)) + eps).rsqrt().matrix();
  Matrix xhat = inv_std.asDiagonal() * xc;
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix().rowwise() + beta.value().row(0);
  return tape_of(x).push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Matrix& g = t.node_grad(self);
        if (t.node_requires_grad(gamma.id)) t.grad_buffer(gamma.id) += (g.array() * xhat.array()).colwise().sum().matrix();
        if (t.node_requires_grad(beta.id)) t.grad_buffer(beta.id) += g.colwise().sum();
        if (t.node_requires_grad(x.id)) {
          const auto m = static_cast<double>(xhat.cols());
          Matrix dxhat = (g.array().rowwise() * t.node_value(gamma.id).row(0).array()).matrix();
          Eigen::VectorXd mean_d = dxhat.rowwise().sum() / m;
          Eigen::VectorXd mean_dx = (dxhat.array() * xhat.array()).rowwise().sum().matrix() / m;
          Matrix dx = dxhat.colwise() - mean_d;
          dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
          t.grad_buffer(x.id) += inv_std.asDiagonal() * dx;
        }
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    if (p.cols() != cols) throw ShapeError("concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return tape_of(parts.front()).push(std::move(out), parts, [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      const auto n = t.node_value(p.id).rows();
      if (t.node_requires_grad(p.id)) t.grad_buffer(p.id) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  return tape_of(a).push(std::move(out), {a}, [a, start, count](Tape& t, std::size_t self) {
    t.grad_buffer(a.id).middleRows(start, count) += t.node_grad(self);
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix& T = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) {
      throw ShapeError("token id " + std::to_string(ids[i]) + " outside table of " + std::to_string(T.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  }
  return tape_of(table).push(std::move(out), {table}, [table, ids](Tape& t, std::size_t self) {
    const Matrix& g = t.node_grad(self);
    Matrix& gt = t.grad_buffer(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var attention(Var q, Var k, Var v, int n_heads, const Mask& mask, std::vector<Matrix>* probs_out) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  const auto n = Q.rows();
  const auto d = Q.cols();
  if (K.rows() != n || V.rows() != n || K.cols() != d || V.cols() != d) throw ShapeError("attention q/k/v mismatch");
  if (n_heads <= 0 || d % n_heads != 0) throw ShapeError("attention width not divisible by heads");
  if (mask.rows() != n || mask.cols() != n) throw ShapeError("attention mask is not " + shape(Q.leftCols(0)));
  const auto dh = d / n_heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(n_heads));
  Matrix out(n, d);
  for (int h = 0; h < n_heads; ++h) {
    Matrix S = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * s;
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask(i, j)) mx = std::max(mx, S(i, j));
      }
      if (!std::isfinite(mx)) throw ShapeError("attention row " + std::to_string(i) + " has no visible key");
      double z = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        S(i, j) = mask(i, j) ? std::exp(S(i, j) - mx) : 0.0;
        z += S(i, j);
      }
      S.row(i) /= z;
    }
    out.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(S);
  }
  if (probs_out) *probs_out = probs;
  return tape_of(q).push(std::move(out), {q, k, v},
                         [q, k, v, n_heads, dh, s, probs = std::move(probs)](Tape& t, std::size_t self) {
                           const Matrix& G = t.node_grad(self);
                           const Matrix& Q = t.node_value(q.id);
                           const Matrix& K = t.node_value(k.id);
                           const Matrix& V = t.node_value(v.id);
                           for (int h = 0; h < n_heads; ++h) {
                             const Matrix& P = probs[static_cast<std::size_t>(h)];
                             const auto g = G.middleCols(h * dh, dh);
                             if (t.node_requires_grad(v.id)) {
                               t.grad_buffer(v.id).middleCols(h * dh, dh).noalias() += P.transpose() * g;
                             }
                             if (!t.node_requires_grad(q.id) && !t.node_requires_grad(k.id)) continue;
                             Matrix dP = g * V.middleCols(h * dh, dh).transpose();
                             Eigen::VectorXd rs = (dP.array() * P.array()).rowwise().sum().matrix();
                             Matrix dS = (P.array() * (dP.colwise() - rs).array()).matrix() * s;
                             if (t.node_requires_grad(q.id)) {
                               t.grad_buffer(q.id).middleCols(h * dh, dh).noalias() += dS * K.middleCols(h * dh, dh);
                             }
                             if (t.node_requires_grad(k.id)) {
                               t.grad_buffer(k.id).middleCols(h * dh, dh).noalias() +=
                                   dS.transpose() * Q.middleCols(h * dh, dh);
                             }
                           }
                         });
}

Matrix log_softmax_rows(const Matrix& logits) {
  Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  Matrix shifted = logits.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

Var cross_entropy(Var logits, const std::vector<int>& targets, double eps) {
  const Matrix& L = logits.value();
  const auto n = L.rows();
  const auto V = L.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n) throw ShapeError("cross_entropy target count mismatch");
  if (n == 0) throw ShapeError("cross_entropy over zero rows");
  Matrix logp = log_softmax_rows(L);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= V) throw ShapeError("target id out of range");
    loss -= (1.0 - eps) * logp(i, y) + eps * logp.row(i).mean();
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  return tape_of(logits).push(std::move(out), {logits},
                              [logits, targets, eps, logp = std::move(logp)](Tape& t, std::size_t self) {
                                const double g = t.node_grad(self)(0, 0);
                                const auto n = logp.rows();
                                const auto V = static_cast<double>(logp.cols());
                                Matrix d = logp.array().exp().matrix();
                                d.array() -= eps / V;
                                for (Eigen::Index i = 0; i < n; ++i) d(i, targets[static_cast<std::size_t>(i)]) -= 1.0 - eps;
                                t.grad_buffer(logits.id) += d * (g / static_cast<double>(n));
                              });
}

}  // namespace radvqa::toyvlm
