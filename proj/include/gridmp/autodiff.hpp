#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace gridmp {

class Tape;
struct ParamStore;

/// Handle to one node of a taped computation. Cheap to copy; owns nothing.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  int rows = 0;
  int cols = 0;
};

/// Single-threaded computation tape with reverse-mode differentiation.
/// Values are dense 64-bit matrices (vectors are n x 1, scalars 1 x 1).
/// Gradients accumulate in a fixed reverse sweep, so identical tapes give
/// bitwise-identical gradients.
class Tape {
 public:
  /// Leaf that will not receive a gradient.
  Var constant(Eigen::MatrixXd value);

  /// Leaf that participates in backward (finite-difference tests, inputs).
  Var leaf(Eigen::MatrixXd value);

  /// Leaf bound to a named parameter of `store`; collect_grads() later
  /// accumulates its gradient into the store's slot.
  Var param(ParamStore& store, const std::string& name);

  const Eigen::MatrixXd& value(Var v) const;

  /// Gradient of the last backward() root w.r.t. `v`. Zero matrix when the
  /// node was not reached.
  const Eigen::MatrixXd& grad(Var v) const;

  /// Reverse sweep from a scalar root. Throws std::invalid_argument when the
  /// root is not 1 x 1. A root with no differentiable ancestry is a no-op.
  void backward(Var root);

  /// Adds gradients of every param()-bound leaf into its store slot and
  /// marks the store's gradients populated.
  void collect_grads(ParamStore& store) const;

  int size() const { return static_cast<int>(nodes_.size()); }

  // --- internals shared with the op definitions ---
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // pulls own grad, pushes to parents
  };
  Var emit(Eigen::MatrixXd value, bool requires_grad, std::function<void(Tape&, int)> backprop);
  Eigen::MatrixXd& grad_ref(int id) { return nodes_[id].grad; }
  const Node& node(int id) const { return nodes_[id]; }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<int, int>> param_bindings_;  // (node id, store slot)
};

// Taped operations. Every op checks shape compatibility and throws
// std::invalid_argument naming the op and the offending shapes.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double c);
Var add_rowvec(Var x, Var bias);  // bias is 1 x c, broadcast over rows
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var leaky_relu(Var x, double slope);
Var tanh(Var x);
Var square(Var x);
Var sum(Var x);   // 1 x 1
Var mean(Var x);  // 1 x 1

/// Row-major reinterpretation to rows x cols (element count preserved).
Var reshape(Var x, int rows, int cols);

/// Rows of x selected by `rows` (duplicates allowed).
Var gather_rows(Var x, std::vector<int> rows);

/// out(i, j) = table(idx(i, j), 0) for a column-vector table; idx entries
/// of -1 produce 0 and receive no gradient.
Var lookup(Var table, const Eigen::MatrixXi& idx);

/// Per-segment row sums: out.row(s) = sum of x.row(m) over seg[m] == s.
Var segment_sum(Var x, std::vector<int> seg, int n_segments);

/// Softmax of an m x 1 score column within each segment independently.
Var segment_softmax(Var scores, std::vector<int> seg, int n_segments);

}  // namespace gridmp
