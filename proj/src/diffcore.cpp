#include "zoomshot/diffcore.hpp"

#include <cmath>

#include "zoomshot/errors.hpp"

namespace zoomshot::diff {

const char* to_string(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Scale: return "scale";
    case OpKind::AddRowBias: return "add_row_bias";
    case OpKind::RowCosine: return "row_cosine";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::L1Mean: return "l1_mean";
    case OpKind::MseMean: return "mse_mean";
    case OpKind::CrossEntropyRows: return "cross_entropy_rows";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

std::string shape_string(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw UsageError("scalar() on non-scalar node " + shape_string(v));
  return v(0, 0);
}

Var Graph::leaf(Matrix value, bool requires_grad) {
  if (!value.allFinite()) throw ValidationError("leaf tensor contains NaN or Inf");
  Node node;
  node.op = OpKind::Leaf;
  node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::push(OpKind op, std::initializer_list<Var> inputs, Matrix value, BackwardFn backward) {
  Node node;
  node.op = op;
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw UsageError("operands belong to different graphs");
    node.inputs.push_back(in.id());
    node.needs_grad = node.needs_grad || nodes_[in.id()].needs_grad;
  }
  node.value = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw UsageError("loss belongs to a different graph");
  const Node& root = nodes_.at(loss.id());
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw UsageError("backward() needs a scalar loss, got " + shape_string(root.value));

  std::vector<Matrix> adjoint(loss.id() + 1);
  adjoint[loss.id()] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || adjoint[i].size() == 0) continue;
    if (node.op == OpKind::Leaf) {
      if (node.requires_grad) node.grad += adjoint[i];
      continue;
    }
    InputAdjoints slots;
    slots.reserve(node.inputs.size());
    for (std::size_t in : node.inputs) {
      if (!nodes_[in].needs_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (adjoint[in].size() == 0)
        adjoint[in] = Matrix::Zero(nodes_[in].value.rows(), nodes_[in].value.cols());
      slots.push_back(&adjoint[in]);
    }
    node.backward(adjoint[i], slots);
  }
}

void Graph::zero_grad() {
  for (Node& node : nodes_)
    if (node.op == OpKind::Leaf) node.grad.setZero();
}

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av) + " vs " +
                     shape_string(bv));
  Graph& g = a.graph();
  const double sign = g.faults().flip_matmul_backward ? -1.0 : 1.0;
  return g.push(OpKind::MatMul, {a, b}, av * bv,
                [&g, ia = a.id(), ib = b.id(), sign](const Matrix& up, const InputAdjoints& adj) {
                  if (adj[0]) adj[0]->noalias() += sign * (up * g.value(ib).transpose());
                  if (adj[1]) adj[1]->noalias() += g.value(ia).transpose() * up;
                });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  return a.graph().push(OpKind::Add, {a, b}, a.value() + b.value(),
                        [](const Matrix& up, const InputAdjoints& adj) {
                          if (adj[0]) *adj[0] += up;
                          if (adj[1]) *adj[1] += up;
                        });
}

Var subtract(Var a, Var b) {
  require_same_shape("subtract", a.value(), b.value());
  return a.graph().push(OpKind::Subtract, {a, b}, a.value() - b.value(),
                        [](const Matrix& up, const InputAdjoints& adj) {
                          if (adj[0]) *adj[0] += up;
                          if (adj[1]) *adj[1] -= up;
                        });
}

Var scale(Var a, double factor) {
  return a.graph().push(OpKind::Scale, {a}, factor * a.value(),
                        [factor](const Matrix& up, const InputAdjoints& adj) {
                          if (adj[0]) *adj[0] += factor * up;
                        });
}

Var add_row_bias(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_row_bias: bias " + shape_string(bv) + " does not fit " +
                     shape_string(av));
  Matrix out = av.rowwise() + bv.row(0);
  return a.graph().push(OpKind::AddRowBias, {a, bias}, std::move(out),
                        [](const Matrix& up, const InputAdjoints& adj) {
                          if (adj[0]) *adj[0] += up;
                          if (adj[1]) *adj[1] += up.colwise().sum();
                        });
}

Var row_cosine(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw ShapeError("row_cosine: column counts differ " + shape_string(av) + " vs " +
                     shape_string(bv));
  const Eigen::VectorXd a_norm = av.rowwise().norm();
  const Eigen::VectorXd b_norm = bv.rowwise().norm();
  for (Eigen::Index i = 0; i < a_norm.size(); ++i)
    if (!(a_norm(i) > 0.0))
      throw DegenerateError("row_cosine: zero-norm row " + std::to_string(i) + " in left operand",
                            static_cast<std::size_t>(i));
  for (Eigen::Index j = 0; j < b_norm.size(); ++j)
    if (!(b_norm(j) > 0.0))
      throw DegenerateError("row_cosine: zero-norm row " + std::to_string(j) + " in right operand",
                            static_cast<std::size_t>(j));

  Matrix a_unit = av.array().colwise() / a_norm.array();
  Matrix b_unit = bv.array().colwise() / b_norm.array();
  Matrix cosine = a_unit * b_unit.transpose();
  Matrix saved = cosine;
  return a.graph().push(
      OpKind::RowCosine, {a, b}, std::move(cosine),
      [a_unit = std::move(a_unit), b_unit = std::move(b_unit), a_norm, b_norm,
       cosine = std::move(saved)](const Matrix& up, const InputAdjoints& adj) {
        const Matrix weighted = up.cwiseProduct(cosine);
        if (adj[0]) {
          Matrix ga = up * b_unit;
          ga -= (a_unit.array().colwise() * weighted.rowwise().sum().array()).matrix();
          *adj[0] += (ga.array().colwise() / a_norm.array()).matrix();
        }
        if (adj[1]) {
          Matrix gb = up.transpose() * a_unit;
          gb -= (b_unit.array().colwise() * weighted.colwise().sum().transpose().array()).matrix();
          *adj[1] += (gb.array().colwise() / b_norm.array()).matrix();
        }
      });
}

Var row_softmax(Var z, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("row_softmax: temperature must be > 0, got " + std::to_string(temperature));
  const Matrix& zv = z.value();
  Matrix probs(zv.rows(), zv.cols());
  for (Eigen::Index i = 0; i < zv.rows(); ++i) {
    const auto scaled = zv.row(i).array() / temperature;
    const auto shifted = (scaled - scaled.maxCoeff()).exp();
    probs.row(i) = shifted / shifted.sum();
  }
  Matrix saved = probs;
  return z.graph().push(OpKind::RowSoftmax, {z}, std::move(probs),
                        [probs = std::move(saved), temperature](const Matrix& up,
                                                               const InputAdjoints& adj) {
                          if (!adj[0]) return;
                          const Eigen::VectorXd inner = up.cwiseProduct(probs).rowwise().sum();
                          Matrix centered = up.colwise() - inner;
                          *adj[0] += probs.cwiseProduct(centered) / temperature;
                        });
}

Var l1_mean(Var a, Var b) {
  require_same_shape("l1_mean", a.value(), b.value());
  Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.rows());
  if (diff.size() > 0) a.graph().note_l1_gap(diff.cwiseAbs().minCoeff());
  const double value = diff.cwiseAbs().sum() / n;
  return a.graph().push(OpKind::L1Mean, {a, b}, scalar_matrix(value),
                        [diff = std::move(diff), n](const Matrix& up, const InputAdjoints& adj) {
                          // Eigen's cwiseSign gives sign(0) = 0.
                          const Matrix g = diff.cwiseSign() * (up(0, 0) / n);
                          if (adj[0]) *adj[0] += g;
                          if (adj[1]) *adj[1] -= g;
                        });
}

Var mse_mean(Var a, Var b) {
  require_same_shape("mse_mean", a.value(), b.value());
  Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.rows());
  const double value = diff.squaredNorm() / n;
  return a.graph().push(OpKind::MseMean, {a, b}, scalar_matrix(value),
                        [diff = std::move(diff), n](const Matrix& up, const InputAdjoints& adj) {
                          const Matrix g = diff * (2.0 * up(0, 0) / n);
                          if (adj[0]) *adj[0] += g;
                          if (adj[1]) *adj[1] -= g;
                        });
}

namespace {

void require_stochastic(const char* which, const Matrix& p) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if ((p.row(i).array() < 0.0).any())
      throw ValidationError(std::string("cross_entropy_rows: negative entry in ") + which +
                            " row " + std::to_string(i));
    const double s = p.row(i).sum();
    if (!(std::abs(s - 1.0) <= kStochasticTolerance))
      throw ValidationError(std::string("cross_entropy_rows: ") + which + " row " +
                            std::to_string(i) + " sums to " + std::to_string(s));
  }
}

}  // namespace

Var cross_entropy_rows(Var p_teacher, Var p_student) {
  require_same_shape("cross_entropy_rows", p_teacher.value(), p_student.value());
  require_stochastic("teacher", p_teacher.value());
  require_stochastic("student", p_student.value());
  const Matrix& pt = p_teacher.value();
  const Matrix& ps = p_student.value();
  const double n = static_cast<double>(pt.rows());
  Matrix log_ps = (ps.array() + kLogEpsilon).log().matrix();
  const double value = -pt.cwiseProduct(log_ps).sum() / n;
  Graph& g = p_teacher.graph();
  return g.push(OpKind::CrossEntropyRows, {p_teacher, p_student}, scalar_matrix(value),
                [&g, it = p_teacher.id(), is = p_student.id(), log_ps = std::move(log_ps), n](
                    const Matrix& up, const InputAdjoints& adj) {
                  const double k = up(0, 0) / n;
                  if (adj[0]) *adj[0] -= log_ps * k;
                  if (adj[1])
                    *adj[1] -= (g.value(it).array() / (g.value(is).array() + kLogEpsilon) * k)
                                   .matrix();
                });
}

Var sum(Var a) {
  return a.graph().push(OpKind::Sum, {a}, scalar_matrix(a.value().sum()),
                        [](const Matrix& up, const InputAdjoints& adj) {
                          if (adj[0]) adj[0]->array() += up(0, 0);
                        });
}

}  // namespace zoomshot::diff
