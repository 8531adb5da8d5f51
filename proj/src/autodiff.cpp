#include "citerec/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace citerec::nn {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
     << b.cols();
  throw std::invalid_argument(os.str());
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("Var: empty handle");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non-scalar node");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::scalar_constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.ref = &p.value;
  n.param = const_cast<Parameter*>(&p);
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (std::size_t in : inputs) {
      if (nodes_[in].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == 0) {
    const Matrix& val = value(v.id());
    return Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty() || !loss.valid()) {
    throw std::logic_error("backward: no forward pass has been recorded");
  }
  if (loss.tape() != this) throw std::logic_error("backward: loss belongs to another tape");
  if (!recording_) throw std::logic_error("backward: tape was created without gradient recording");
  if (swept_) throw std::logic_error("backward: tape has already been swept");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) throw std::logic_error("backward: loss must be a scalar");
  swept_ = true;

  grad_ref(loss.id())(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param != nullptr && n.grad.size() != 0) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->grad = Matrix::Zero(n.grad.rows(), n.grad.cols());
      }
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ib)) tp.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g;
    if (tp.needs_grad(ib)) tp.grad_ref(ib) -= g;
  });
}

Var add_row(Var x, Var row) {
  Tape& t = same_tape(x, row, "add_row");
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("add_row", x.value(), row.value());
  const std::size_t ix = x.id(), ir = row.id();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {ix, ir}, [ix, ir](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ix)) tp.grad_ref(ix) += g;
    if (tp.needs_grad(ir)) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var scale(Var x, double s) {
  const std::size_t ix = x.id();
  return x.tape()->push(x.value() * s, {ix}, [ix, s](Tape& tp, std::size_t self) {
    tp.grad_ref(ix) += tp.grad_ref(self) * s;
  });
}

Var add_scalar(Var x, double s) {
  const std::size_t ix = x.id();
  Matrix out = x.value().array() + s;
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    tp.grad_ref(ix) += tp.grad_ref(self);
  });
}

Var mul_elem(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul_elem");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul_elem", a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.needs_grad(ib)) tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Var relu(Var x) {
  const std::size_t ix = x.id();
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    tp.grad_ref(ix) += (tp.value(ix).array() > 0.0).select(g, 0.0).matrix();
  });
}

Var hinge(Var x) { return relu(x); }

Var sigmoid(Var x) {
  const std::size_t ix = x.id();
  Matrix out = x.value().unaryExpr([](double v) {
    // Split on sign so exp never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_ref(self);
    tp.grad_ref(ix).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var transpose(Var x) {
  const std::size_t ix = x.id();
  Matrix out = x.value().transpose();
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    tp.grad_ref(ix) += tp.grad_ref(self).transpose();
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_cols: operands on different tapes");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.push(std::move(out), ids, [ids, widths](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.grad_ref(ids[k]) += g.middleCols(off, widths[k]);
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> heights;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_rows: operands on different tapes");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return t.push(std::move(out), ids, [ids, heights](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) tp.grad_ref(ids[k]) += g.middleRows(off, heights[k]);
      off += heights[k];
    }
  });
}

Var slice_cols(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  const std::size_t ix = x.id();
  Matrix out = x.value().middleCols(begin, count);
  return x.tape()->push(std::move(out), {ix}, [ix, begin, count](Tape& tp, std::size_t self) {
    tp.grad_ref(ix).middleCols(begin, count) += tp.grad_ref(self);
  });
}

Var slice_rows(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  const std::size_t ix = x.id();
  Matrix out = x.value().middleRows(begin, count);
  return x.tape()->push(std::move(out), {ix}, [ix, begin, count](Tape& tp, std::size_t self) {
    tp.grad_ref(ix).middleRows(begin, count) += tp.grad_ref(self);
  });
}

Var sum(Var x) {
  const std::size_t ix = x.id();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    tp.grad_ref(ix).array() += tp.grad_ref(self)(0, 0);
  });
}

Var mean_scalars(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("mean_scalars: no inputs");
  Tape& t = *xs.front().tape();
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  double acc = 0.0;
  for (const Var& x : xs) {
    if (x.tape() != &t) throw std::invalid_argument("mean_scalars: operands on different tapes");
    acc += x.scalar();
    ids.push_back(x.id());
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  Matrix out(1, 1);
  out(0, 0) = acc * inv;
  return t.push(std::move(out), ids, [ids, inv](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0) * inv;
    for (std::size_t id : ids) {
      if (tp.needs_grad(id)) tp.grad_ref(id)(0, 0) += g;
    }
  });
}

Var dot(Var a, Var b) {
  Tape& t = same_tape(a, b, "dot");
  if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols()) {
    shape_error("dot", a.value(), b.value());
  }
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().row(0).dot(b.value().row(0));
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0);
    if (tp.needs_grad(ia)) tp.grad_ref(ia) += g * tp.value(ib);
    if (tp.needs_grad(ib)) tp.grad_ref(ib) += g * tp.value(ia);
  });
}

Var l2_normalize_rows(Var x) {
  const std::size_t ix = x.id();
  const Matrix& xv = x.value();
  Eigen::VectorXd norms = xv.rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) throw std::domain_error("l2_normalize_rows: zero-norm row");
  }
  Matrix out = xv.array().colwise() / norms.array();
  return x.tape()->push(std::move(out), {ix}, [ix, norms](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_ref(self);
    Matrix& gx = tp.grad_ref(ix);
    for (Index r = 0; r < y.rows(); ++r) {
      const double gy = g.row(r).dot(y.row(r));
      gx.row(r) += (g.row(r) - gy * y.row(r)) / norms(r);
    }
  });
}

Var softmax_rows(Var x, const std::vector<bool>& key_mask, const std::vector<bool>& row_mask) {
  const Matrix& xv = x.value();
  const Index rows = xv.rows(), cols = xv.cols();
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != cols) {
    throw std::invalid_argument("softmax_rows: key mask length mismatch");
  }
  if (!row_mask.empty() && static_cast<Index>(row_mask.size()) != rows) {
    throw std::invalid_argument("softmax_rows: row mask length mismatch");
  }
  auto key_on = [&](Index j) { return key_mask.empty() || key_mask[static_cast<std::size_t>(j)]; };
  auto row_on = [&](Index i) { return row_mask.empty() || row_mask[static_cast<std::size_t>(i)]; };

  bool any_key = false;
  for (Index j = 0; j < cols; ++j) any_key = any_key || key_on(j);
  if (!any_key) throw std::invalid_argument("softmax_rows: every position is masked");

  Matrix out = Matrix::Zero(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (!row_on(i)) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < cols; ++j) {
      if (key_on(j)) mx = std::max(mx, xv(i, j));
    }
    double z = 0.0;
    for (Index j = 0; j < cols; ++j) {
      if (!key_on(j)) continue;
      out(i, j) = std::exp(xv(i, j) - mx);
      z += out(i, j);
    }
    out.row(i) /= z;
  }
  const std::size_t ix = x.id();
  return x.tape()->push(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad_ref(self);
    Matrix& gx = tp.grad_ref(ix);
    for (Index i = 0; i < y.rows(); ++i) {
      const double gy = g.row(i).dot(y.row(i));
      gx.row(i).array() += y.row(i).array() * (g.row(i).array() - gy);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm_rows");
  same_tape(x, bias, "layer_norm_rows");
  const Matrix& xv = x.value();
  const Index rows = xv.rows(), cols = xv.cols();
  if (gain.rows() != 1 || gain.cols() != cols) shape_error("layer_norm_rows", xv, gain.value());
  if (bias.rows() != 1 || bias.cols() != cols) shape_error("layer_norm_rows", xv, bias.value());

  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, xhat = std::move(xhat), inv_std](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_ref(self);
                  if (tp.needs_grad(ig)) tp.grad_ref(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (tp.needs_grad(ib)) tp.grad_ref(ib) += g.colwise().sum();
                  if (!tp.needs_grad(ix)) return;
                  const auto gain_row = tp.value(ig).row(0).array();
                  Matrix& gx = tp.grad_ref(ix);
                  const double n = static_cast<double>(g.cols());
                  for (Index i = 0; i < g.rows(); ++i) {
                    Eigen::ArrayXd dxhat = (g.row(i).array() * gain_row).transpose();
                    const double s1 = dxhat.sum();
                    const double s2 = (dxhat * xhat.row(i).array().transpose()).sum();
                    gx.row(i).array() += (inv_std(i) / n) *
                                         (n * dxhat - s1 - xhat.row(i).array().transpose() * s2)
                                             .transpose();
                  }
                });
}

}  // namespace citerec::nn
