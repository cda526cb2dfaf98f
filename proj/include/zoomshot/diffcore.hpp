#pragma once

// Reverse-mode differentiation over a closed set of matrix operations.
//
// A Graph is a tape: nodes are appended in evaluation order and backward()
// walks them in exact reverse insertion order. Leaves created with
// requires_grad accumulate gradients across backward() calls until
// zero_grad(). Everything is double precision and single-threaded per graph.

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "zoomshot/types.hpp"

namespace zoomshot::diff {

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Subtract,
  Scale,
  AddRowBias,
  RowCosine,
  RowSoftmax,
  L1Mean,
  MseMean,
  CrossEntropyRows,
  Sum,
};

const char* to_string(OpKind op);

/// Test-only fault injection, used to prove the gradient checker can fail.
struct FaultInjection {
  bool flip_matmul_backward = false;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Adjoint buffers of a node's inputs; nullptr where the input needs no gradient.
using InputAdjoints = std::vector<Matrix*>;
using BackwardFn = std::function<void(const Matrix& upstream, const InputAdjoints& adjoints)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// New leaf. Throws ValidationError if any entry is NaN/Inf.
  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  /// `loss`. Throws UsageError unless loss is 1x1.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id()).op; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id()).inputs; }
  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }

  void set_faults(FaultInjection faults) { faults_ = faults; }
  const FaultInjection& faults() const { return faults_; }

  /// Smallest |a_ij - b_ij| seen by any l1_mean node; +inf if none ran.
  /// Finite-difference checks skip points sitting on an L1 kink.
  double min_l1_gap() const { return min_l1_gap_; }
  void note_l1_gap(double gap) { min_l1_gap_ = std::min(min_l1_gap_, gap); }

  /// Appends an op node. Used by the op implementations.
  Var push(OpKind op, std::initializer_list<Var> inputs, Matrix value, BackwardFn backward);

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;  // populated for leaves only
    bool requires_grad = false;
    bool needs_grad = false;  // requires_grad leaf, or any input needs_grad
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  FaultInjection faults_;
  double min_l1_gap_ = std::numeric_limits<double>::infinity();
};

// ---- operations --------------------------------------------------------

/// a[n x k] * b[k x p].
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var scale(Var a, double factor);
/// a[n x k] + bias[1 x k] on every row (used by affine maps).
Var add_row_bias(Var a, Var bias);
/// Entry (i, j) = cos(a_i, b_j). Zero-norm rows raise DegenerateError.
Var row_cosine(Var a, Var b);
/// Row-wise softmax of z / temperature.
Var row_softmax(Var z, double temperature);
/// Mean over rows of the per-row L1 distance. sign(0) = 0 in the subgradient.
Var l1_mean(Var a, Var b);
/// Mean over rows of the per-row squared L2 distance.
Var mse_mean(Var a, Var b);
/// Mean over rows of -sum_j p_teacher[i,j] * log(p_student[i,j] + 1e-12).
/// Both inputs must be row-stochastic (|row sum - 1| <= 1e-9, entries >= 0).
Var cross_entropy_rows(Var p_teacher, Var p_student);
/// Sum of all entries.
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return subtract(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

inline constexpr double kLogEpsilon = 1e-12;
inline constexpr double kStochasticTolerance = 1e-9;

std::string shape_string(const Matrix& m);

}  // namespace zoomshot::diff
