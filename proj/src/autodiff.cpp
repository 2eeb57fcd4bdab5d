#include "gridmp/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "gridmp/params.hpp"

namespace gridmp {

namespace {

std::string shape_str(const Var& v) {
  return std::to_string(v.rows) + "x" + std::to_string(v.cols);
}

[[noreturn]] void shape_error(const std::string& op, const Var& a, const Var& b) {
  throw std::invalid_argument(op + ": shape mismatch (" + shape_str(a) + " vs " + shape_str(b) +
                              ")");
}

void check_same_tape(const char* op, const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": vars from different tapes");
}

}  // namespace

Var Tape::emit(Eigen::MatrixXd value, bool requires_grad,
               std::function<void(Tape&, int)> backprop) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  return Var{this, id, static_cast<int>(nodes_[id].value.rows()),
             static_cast<int>(nodes_[id].value.cols())};
}

Var Tape::constant(Eigen::MatrixXd value) { return emit(std::move(value), false, nullptr); }

Var Tape::leaf(Eigen::MatrixXd value) { return emit(std::move(value), true, nullptr); }

Var Tape::param(ParamStore& store, const std::string& name) {
  const int slot = store.slot(name);
  Var v = emit(store.values[slot], true, nullptr);
  param_bindings_.emplace_back(v.id, slot);
  return v;
}

const Eigen::MatrixXd& Tape::value(Var v) const { return nodes_.at(v.id).value; }

const Eigen::MatrixXd& Tape::grad(Var v) const {
  static const Eigen::MatrixXd empty;
  const Node& n = nodes_.at(v.id);
  return n.grad.size() > 0 ? n.grad : empty;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root from a different tape");
  if (root.rows != 1 || root.cols != 1) {
    throw std::invalid_argument("backward: root must be scalar (1x1), got " + shape_str(root));
  }
  Node& r = nodes_.at(root.id);
  if (!r.requires_grad) return;  // constant root: nothing to do
  for (int id = 0; id <= root.id; ++id) {
    Node& n = nodes_[id];
    if (n.requires_grad) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  }
  r.grad(0, 0) = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backprop) n.backprop(*this, id);
  }
}

void Tape::collect_grads(ParamStore& store) const {
  for (const auto& [node_id, slot] : param_bindings_) {
    const Node& n = nodes_[node_id];
    if (n.grad.size() > 0) store.grads[slot] += n.grad;
  }
  store.grads_populated = true;
}

namespace {

// Accumulate into a parent only if it participates in backward.
inline void accum(Tape& t, int parent, const Eigen::MatrixXd& g) {
  if (t.node(parent).requires_grad) t.grad_ref(parent) += g;
}

inline bool rg(const Var& v) { return v.tape->node(v.id).requires_grad; }

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape("matmul", a, b);
  if (a.cols != b.rows) shape_error("matmul", a, b);
  Tape& t = *a.tape;
  Eigen::MatrixXd out = t.value(a) * t.value(b);
  const bool needs = rg(a) || rg(b);
  const int ai = a.id, bi = b.id;
  return t.emit(std::move(out), needs, [ai, bi](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, ai, g * tp.node(bi).value.transpose());
    accum(tp, bi, tp.node(ai).value.transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_tape("add", a, b);
  if (a.rows != b.rows || a.cols != b.cols) shape_error("add", a, b);
  Tape& t = *a.tape;
  const int ai = a.id, bi = b.id;
  return t.emit(t.value(a) + t.value(b), rg(a) || rg(b), [ai, bi](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, ai, g);
    accum(tp, bi, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape("sub", a, b);
  if (a.rows != b.rows || a.cols != b.cols) shape_error("sub", a, b);
  Tape& t = *a.tape;
  const int ai = a.id, bi = b.id;
  return t.emit(t.value(a) - t.value(b), rg(a) || rg(b), [ai, bi](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, ai, g);
    accum(tp, bi, -g);
  });
}

Var mul(Var a, Var b) {
  check_same_tape("mul", a, b);
  if (a.rows != b.rows || a.cols != b.cols) shape_error("mul", a, b);
  Tape& t = *a.tape;
  const int ai = a.id, bi = b.id;
  return t.emit(t.value(a).cwiseProduct(t.value(b)), rg(a) || rg(b),
                [ai, bi](Tape& tp, int self) {
                  const Eigen::MatrixXd& g = tp.node(self).grad;
                  accum(tp, ai, g.cwiseProduct(tp.node(bi).value));
                  accum(tp, bi, g.cwiseProduct(tp.node(ai).value));
                });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  const int ai = a.id;
  return t.emit(t.value(a) * c, rg(a), [ai, c](Tape& tp, int self) {
    accum(tp, ai, tp.node(self).grad * c);
  });
}

Var add_rowvec(Var x, Var bias) {
  check_same_tape("add_rowvec", x, bias);
  if (bias.rows != 1 || bias.cols != x.cols) shape_error("add_rowvec", x, bias);
  Tape& t = *x.tape;
  Eigen::MatrixXd out = t.value(x);
  out.rowwise() += t.value(bias).row(0);
  const int xi = x.id, bi = bias.id;
  return t.emit(std::move(out), rg(x) || rg(bias), [xi, bi](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, xi, g);
    accum(tp, bi, g.colwise().sum());
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape("concat_cols", a, b);
  if (a.rows != b.rows) shape_error("concat_cols", a, b);
  Tape& t = *a.tape;
  Eigen::MatrixXd out(a.rows, a.cols + b.cols);
  out.leftCols(a.cols) = t.value(a);
  out.rightCols(b.cols) = t.value(b);
  const int ai = a.id, bi = b.id, ca = a.cols, cb = b.cols;
  return t.emit(std::move(out), rg(a) || rg(b), [ai, bi, ca, cb](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, ai, g.leftCols(ca));
    accum(tp, bi, g.rightCols(cb));
  });
}

Var concat_rows(Var a, Var b) {
  check_same_tape("concat_rows", a, b);
  if (a.cols != b.cols) shape_error("concat_rows", a, b);
  Tape& t = *a.tape;
  Eigen::MatrixXd out(a.rows + b.rows, a.cols);
  out.topRows(a.rows) = t.value(a);
  out.bottomRows(b.rows) = t.value(b);
  const int ai = a.id, bi = b.id, ra = a.rows, rb = b.rows;
  return t.emit(std::move(out), rg(a) || rg(b), [ai, bi, ra, rb](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, ai, g.topRows(ra));
    accum(tp, bi, g.bottomRows(rb));
  });
}

Var reshape(Var x, int rows, int cols) {
  Tape& t = *x.tape;
  const Eigen::MatrixXd& v = t.value(x);
  if (rows * cols != v.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(x) + " as " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    out(k / cols, k % cols) = v(k / v.cols(), k % v.cols());
  }
  const int xi = x.id;
  return t.emit(std::move(out), rg(x), [xi](Tape& tp, int self) {
    if (!tp.node(xi).requires_grad) return;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::MatrixXd& gx = tp.grad_ref(xi);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      gx(k / gx.cols(), k % gx.cols()) += g(k / g.cols(), k % g.cols());
    }
  });
}

Var leaky_relu(Var x, double slope) {
  Tape& t = *x.tape;
  const Eigen::MatrixXd& v = t.value(x);
  Eigen::MatrixXd out = v.unaryExpr([slope](double e) { return e >= 0.0 ? e : slope * e; });
  const int xi = x.id;
  return t.emit(std::move(out), rg(x), [xi, slope](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    const Eigen::MatrixXd& v = tp.node(xi).value;
    accum(tp, xi, g.binaryExpr(v, [slope](double ge, double ve) {
      return ve >= 0.0 ? ge : slope * ge;
    }));
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape;
  Eigen::MatrixXd out = t.value(x).array().tanh().matrix();
  const int xi = x.id;
  return t.emit(std::move(out), rg(x), [xi](Tape& tp, int self) {
    const Eigen::MatrixXd& y = tp.node(self).value;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, xi, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var square(Var x) {
  Tape& t = *x.tape;
  const int xi = x.id;
  return t.emit(t.value(x).array().square().matrix(), rg(x), [xi](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    accum(tp, xi, (2.0 * g.array() * tp.node(xi).value.array()).matrix());
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(x).sum();
  const int xi = x.id;
  return t.emit(std::move(out), rg(x), [xi](Tape& tp, int self) {
    const double g = tp.node(self).grad(0, 0);
    const auto& v = tp.node(xi).value;
    accum(tp, xi, Eigen::MatrixXd::Constant(v.rows(), v.cols(), g));
  });
}

Var mean(Var x) {
  Tape& t = *x.tape;
  const double inv = 1.0 / static_cast<double>(t.value(x).size());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(x).sum() * inv;
  const int xi = x.id;
  return t.emit(std::move(out), rg(x), [xi, inv](Tape& tp, int self) {
    const double g = tp.node(self).grad(0, 0) * inv;
    const auto& v = tp.node(xi).value;
    accum(tp, xi, Eigen::MatrixXd::Constant(v.rows(), v.cols(), g));
  });
}

Var gather_rows(Var x, std::vector<int> rows) {
  Tape& t = *x.tape;
  const Eigen::MatrixXd& v = t.value(x);
  Eigen::MatrixXd out(static_cast<int>(rows.size()), v.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= v.rows()) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(rows[k]) +
                                  " out of range for " + std::to_string(v.rows()) + " rows");
    }
    out.row(static_cast<int>(k)) = v.row(rows[k]);
  }
  const int xi = x.id;
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  return t.emit(std::move(out), rg(x), [xi, idx](Tape& tp, int self) {
    if (!tp.node(xi).requires_grad) return;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::MatrixXd& gx = tp.grad_ref(xi);
    for (std::size_t k = 0; k < idx->size(); ++k) {
      gx.row((*idx)[k]) += g.row(static_cast<int>(k));
    }
  });
}

Var lookup(Var table, const Eigen::MatrixXi& idx) {
  Tape& t = *table.tape;
  if (table.cols != 1) {
    throw std::invalid_argument("lookup: table must be a column vector, got " + shape_str(table));
  }
  const Eigen::MatrixXd& v = t.value(table);
  Eigen::MatrixXd out(idx.rows(), idx.cols());
  for (int i = 0; i < idx.rows(); ++i) {
    for (int j = 0; j < idx.cols(); ++j) {
      const int k = idx(i, j);
      if (k >= static_cast<int>(v.rows())) {
        throw std::invalid_argument("lookup: index " + std::to_string(k) +
                                    " out of range for table of " + std::to_string(v.rows()));
      }
      out(i, j) = k < 0 ? 0.0 : v(k, 0);
    }
  }
  const int ti = table.id;
  auto indices = std::make_shared<Eigen::MatrixXi>(idx);
  return t.emit(std::move(out), rg(table), [ti, indices](Tape& tp, int self) {
    if (!tp.node(ti).requires_grad) return;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::MatrixXd& gt = tp.grad_ref(ti);
    for (int i = 0; i < indices->rows(); ++i) {
      for (int j = 0; j < indices->cols(); ++j) {
        const int k = (*indices)(i, j);
        if (k >= 0) gt(k, 0) += g(i, j);
      }
    }
  });
}

Var segment_sum(Var x, std::vector<int> seg, int n_segments) {
  Tape& t = *x.tape;
  const Eigen::MatrixXd& v = t.value(x);
  if (static_cast<int>(seg.size()) != v.rows()) {
    throw std::invalid_argument("segment_sum: segment vector length " +
                                std::to_string(seg.size()) + " != rows " +
                                std::to_string(v.rows()));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_segments, v.cols());
  for (int m = 0; m < v.rows(); ++m) out.row(seg[m]) += v.row(m);
  const int xi = x.id;
  auto ids = std::make_shared<std::vector<int>>(std::move(seg));
  return t.emit(std::move(out), rg(x), [xi, ids](Tape& tp, int self) {
    if (!tp.node(xi).requires_grad) return;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::MatrixXd& gx = tp.grad_ref(xi);
    for (std::size_t m = 0; m < ids->size(); ++m) {
      gx.row(static_cast<int>(m)) += g.row((*ids)[m]);
    }
  });
}

Var segment_softmax(Var scores, std::vector<int> seg, int n_segments) {
  Tape& t = *scores.tape;
  if (scores.cols != 1) {
    throw std::invalid_argument("segment_softmax: scores must be a column, got " +
                                shape_str(scores));
  }
  const Eigen::MatrixXd& z = t.value(scores);
  if (static_cast<int>(seg.size()) != z.rows()) {
    throw std::invalid_argument("segment_softmax: segment vector length mismatch");
  }
  Eigen::VectorXd seg_max = Eigen::VectorXd::Constant(n_segments, -1e300);
  for (int m = 0; m < z.rows(); ++m) {
    seg_max(seg[m]) = std::max(seg_max(seg[m]), z(m, 0));
  }
  Eigen::MatrixXd out(z.rows(), 1);
  Eigen::VectorXd seg_sum = Eigen::VectorXd::Zero(n_segments);
  for (int m = 0; m < z.rows(); ++m) {
    out(m, 0) = std::exp(z(m, 0) - seg_max(seg[m]));
    seg_sum(seg[m]) += out(m, 0);
  }
  for (int m = 0; m < z.rows(); ++m) out(m, 0) /= seg_sum(seg[m]);

  const int zi = scores.id;
  auto ids = std::make_shared<std::vector<int>>(std::move(seg));
  const int n_seg = n_segments;
  return t.emit(std::move(out), rg(scores), [zi, ids, n_seg](Tape& tp, int self) {
    if (!tp.node(zi).requires_grad) return;
    const Eigen::MatrixXd& alpha = tp.node(self).value;
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::VectorXd seg_dot = Eigen::VectorXd::Zero(n_seg);
    for (std::size_t m = 0; m < ids->size(); ++m) {
      seg_dot((*ids)[m]) += g(static_cast<int>(m), 0) * alpha(static_cast<int>(m), 0);
    }
    Eigen::MatrixXd& gz = tp.grad_ref(zi);
    for (std::size_t m = 0; m < ids->size(); ++m) {
      const int i = static_cast<int>(m);
      gz(i, 0) += alpha(i, 0) * (g(i, 0) - seg_dot((*ids)[m]));
    }
  });
}

}  // namespace gridmp
