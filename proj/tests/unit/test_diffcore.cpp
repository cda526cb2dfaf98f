#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zoomshot/diffcore.hpp"
#include "zoomshot/errors.hpp"

using namespace zoomshot;
using namespace zoomshot::diff;
using zstest::random_matrix;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

double eval_scalar(const std::function<Var(Graph&, Var)>& f, const Matrix& x) {
  Graph g;
  return f(g, g.constant(x)).scalar();
}

Matrix analytic_grad(const std::function<Var(Graph&, Var)>& f, const Matrix& x) {
  Graph g;
  Var leaf = g.leaf(x);
  g.backward(f(g, leaf));
  return leaf.grad();
}

double fd_error(const std::function<Var(Graph&, Var)>& f, const Matrix& x) {
  const Matrix num = zstest::numeric_gradient([&](const Matrix& p) { return eval_scalar(f, p); }, x);
  return zstest::rel_err(analytic_grad(f, x), num);
}

}  // namespace

TEST(MatMul, IdentityAndProjector) {
  Graph g;
  EXPECT_EQ(matmul(g.constant(Matrix::Identity(2, 2)), g.constant(mat({{1, 2}, {3, 4}}))).value(),
            mat({{1, 2}, {3, 4}}));
  EXPECT_EQ(matmul(g.constant(mat({{1, 0}, {0, 0}})), g.constant(mat({{5}, {7}}))).value(), mat({{5}, {0}}));
}

TEST(MatMul, ShapeErrorNamesBothShapes) {
  Graph g;
  try {
    matmul(g.constant(Matrix::Zero(2, 3)), g.constant(Matrix::Zero(2, 3)));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] vs [2x3]"), std::string::npos);
  }
}

TEST(MatMul, GradientOfSumMatchesFiniteDifferences) {
  const Matrix b = random_matrix(3, 3, 2);
  const auto f = [&](Graph& g, Var a) { return sum(matmul(a, g.constant(b))); };
  EXPECT_LT(fd_error(f, random_matrix(3, 3, 1)), 1e-6);
  const Matrix a = random_matrix(3, 3, 3);
  const auto fb = [&](Graph& g, Var bv) { return sum(matmul(g.constant(a), bv)); };
  EXPECT_LT(fd_error(fb, random_matrix(3, 3, 4)), 1e-6);
}

TEST(RowCosine, Examples) {
  Graph g;
  EXPECT_NEAR(row_cosine(g.constant(mat({{0.3, -2}})), g.constant(mat({{0.3, -2}}))).scalar(), 1.0, 1e-15);
  EXPECT_EQ(row_cosine(g.constant(mat({{1, 0}})), g.constant(mat({{0, 1}}))).scalar(), 0.0);
  EXPECT_NEAR(row_cosine(g.constant(mat({{2, 0}})), g.constant(mat({{1, 0}}))).scalar(), 1.0, 1e-15);
}

TEST(RowCosine, ZeroRowIsDegenerateWithIndex) {
  Graph g;
  try {
    row_cosine(g.constant(mat({{1, 0}, {0, 0}, {1, 1}})), g.constant(mat({{1, 0}})));
    FAIL();
  } catch (const DegenerateError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
  try {
    row_cosine(g.constant(mat({{1, 0}})), g.constant(mat({{1, 0}, {1, 1}, {0, 0}})));
    FAIL();
  } catch (const DegenerateError& e) {
    EXPECT_EQ(e.index(), 2u);
  }
}

TEST(RowCosine, InvariantToPositiveRowRescaling) {
  Matrix a = random_matrix(4, 6, 10), b = random_matrix(5, 6, 11);
  Graph g;
  const Matrix before = row_cosine(g.constant(a), g.constant(b)).value();
  a.row(2) *= 37.5;
  b.row(0) *= 0.003;
  const Matrix after = row_cosine(g.constant(a), g.constant(b)).value();
  EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RowCosine, GradientBothSides) {
  const Matrix b = random_matrix(4, 5, 21);
  EXPECT_LT(fd_error([&](Graph& g, Var a) { return sum(matmul(row_cosine(a, g.constant(b)), g.constant(b))); },
                     random_matrix(3, 5, 20)),
            1e-6);
  const Matrix a = random_matrix(3, 5, 22);
  const Matrix w = random_matrix(3, 4, 23);
  EXPECT_LT(fd_error(
                [&](Graph& g, Var bv) {
                  return sum(matmul(g.constant(w.transpose()), row_cosine(g.constant(a), bv)));
                },
                b),
            1e-6);
}

TEST(RowSoftmax, Examples) {
  Graph g;
  const Matrix u = row_softmax(g.constant(Matrix::Zero(1, 3)), 1.0).value();
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(u(0, j), 1.0 / 3.0, 1e-15);
  const Matrix p = row_softmax(g.constant(mat({{std::log(2.0), 0}})), 1.0).value();
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(RowSoftmax, RejectsNonPositiveTemperature) {
  Graph g;
  EXPECT_THROW(row_softmax(g.constant(Matrix::Zero(1, 2)), 0.0), ConfigError);
  EXPECT_THROW(row_softmax(g.constant(Matrix::Zero(1, 2)), -1.0), ConfigError);
}

TEST(RowSoftmax, RowsSumToOneAndPermutationEquivariant) {
  const Matrix z = random_matrix(6, 7, 30, 10.0);
  Graph g;
  const Matrix p = row_softmax(g.constant(z), 0.7).value();
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);

  Eigen::PermutationMatrix<Eigen::Dynamic> perm(7);
  perm.indices() << 3, 0, 6, 1, 5, 2, 4;
  const Matrix zp = z * perm;
  const Matrix pp = row_softmax(g.constant(zp), 0.7).value();
  EXPECT_LT((pp - p * perm).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(RowSoftmax, SpreadShrinksMonotonicallyAsTemperatureDoubles) {
  const Matrix z = random_matrix(1, 5, 31, 3.0);
  Graph g;
  double prev = 2.0;
  for (double t = 1.0; t <= 1024.0; t *= 2.0) {
    const Matrix p = row_softmax(g.constant(z), t).value();
    const double spread = p.maxCoeff() - p.minCoeff();
    EXPECT_LT(spread, prev) << "T=" << t;
    prev = spread;
  }
}

TEST(RowSoftmax, Gradient) {
  const Matrix w = random_matrix(4, 2, 33);
  for (double t : {1.0, 20.0})
    EXPECT_LT(fd_error([&](Graph& g, Var z) { return sum(matmul(row_softmax(z, t), g.constant(w))); },
                       random_matrix(3, 4, 32)),
              1e-6);
}

TEST(L1Mean, Examples) {
  Graph g;
  const Matrix a = random_matrix(3, 2, 40);
  EXPECT_EQ(l1_mean(g.constant(a), g.constant(a)).scalar(), 0.0);
  EXPECT_EQ(l1_mean(g.constant(mat({{1, 1}})), g.constant(mat({{0, 0}}))).scalar(), 2.0);
  EXPECT_EQ(l1_mean(g.constant(mat({{1, 1}, {0, 3}})), g.constant(mat({{0, 0}, {0, 0}}))).scalar(), 2.5);
  EXPECT_THROW(l1_mean(g.constant(Matrix::Zero(2, 2)), g.constant(Matrix::Zero(2, 3))), ShapeError);
}

TEST(L1Mean, SubgradientAtTieIsZero) {
  const Matrix b = mat({{1, 2}});
  const Matrix grad = analytic_grad([&](Graph& g, Var a) { return l1_mean(a, g.constant(b)); }, mat({{1, 3}}));
  EXPECT_EQ(grad(0, 0), 0.0);
  EXPECT_EQ(grad(0, 1), 1.0);
}

TEST(L1Mean, GradientAwayFromKinks) {
  const Matrix b = random_matrix(4, 3, 41);
  Matrix a = random_matrix(4, 3, 42);
  ASSERT_GT((a - b).cwiseAbs().minCoeff(), 1e-3);
  EXPECT_LT(fd_error([&](Graph& g, Var x) { return l1_mean(x, g.constant(b)); }, a), 1e-6);
}

TEST(L1Mean, RecordsSmallestGap) {
  Graph g;
  l1_mean(g.constant(mat({{1, 2.5}})), g.constant(mat({{1.25, 0}})));
  EXPECT_EQ(g.min_l1_gap(), 0.25);
}

TEST(MseMean, Examples) {
  Graph g;
  const Matrix a = random_matrix(3, 2, 50);
  EXPECT_EQ(mse_mean(g.constant(a), g.constant(a)).scalar(), 0.0);
  EXPECT_EQ(mse_mean(g.constant(mat({{1, 0}})), g.constant(mat({{0, 0}}))).scalar(), 1.0);
  EXPECT_EQ(mse_mean(g.constant(mat({{1, 1}, {2, 2}})), g.constant(Matrix::Zero(2, 2))).scalar(), 5.0);
  EXPECT_THROW(mse_mean(g.constant(Matrix::Zero(2, 2)), g.constant(Matrix::Zero(3, 2))), ShapeError);
}

TEST(CrossEntropyRows, Examples) {
  Graph g;
  const Matrix onehot = mat({{0, 1, 0}, {1, 0, 0}});
  EXPECT_NEAR(cross_entropy_rows(g.constant(onehot), g.constant(onehot)).scalar(), 0.0, 1e-11);
  const Matrix uniform = Matrix::Constant(2, 5, 0.2);
  EXPECT_NEAR(cross_entropy_rows(g.constant(uniform), g.constant(uniform)).scalar(), std::log(5.0), 1e-11);
}

TEST(CrossEntropyRows, RejectsNonStochasticRows) {
  Graph g;
  EXPECT_THROW(cross_entropy_rows(g.constant(mat({{0.5, 0.6}})), g.constant(mat({{0.5, 0.5}}))), ValidationError);
  EXPECT_THROW(cross_entropy_rows(g.constant(mat({{0.5, 0.5}})), g.constant(mat({{1.5, -0.5}}))), ValidationError);
}

TEST(CrossEntropyRows, GradientWrtStudentLogits) {
  Graph tg;
  const Matrix teacher = row_softmax(tg.constant(random_matrix(3, 4, 60)), 1.0).value();
  EXPECT_LT(fd_error([&](Graph& g, Var z) { return cross_entropy_rows(g.constant(teacher), row_softmax(z, 2.0)); },
                     random_matrix(3, 4, 61)),
            1e-5);
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var w = g.leaf(random_matrix(2, 2, 70));
  g.backward(sum(w));
  EXPECT_EQ(w.grad(), Matrix::Ones(2, 2));
}

TEST(Backward, MseClosedForm) {
  // Columns of x are samples; the graph sees them as rows, so it learns W^T.
  const Matrix w0 = random_matrix(3, 4, 71), x = random_matrix(4, 5, 72), y = random_matrix(3, 5, 73);
  Graph g;
  Var wt = g.leaf(w0.transpose());
  g.backward(mse_mean(matmul(g.constant(x.transpose()), wt), g.constant(y.transpose())));
  const Matrix closed = 2.0 / 5.0 * (w0 * x - y) * x.transpose();
  EXPECT_LT(zstest::rel_err(wt.grad().transpose(), closed), 1e-12);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Graph g;
  Var w = g.leaf(Matrix::Ones(2, 2));
  EXPECT_THROW(g.backward(w), UsageError);
}

TEST(Backward, UnreachableLeafGetsZero) {
  Graph g;
  Var used = g.leaf(random_matrix(2, 2, 80));
  Var unused = g.leaf(random_matrix(2, 2, 81));
  g.backward(sum(used));
  EXPECT_EQ(unused.grad(), Matrix::Zero(2, 2));
}

TEST(Backward, SecondPassDoublesGradients) {
  Graph g;
  Var a = g.leaf(random_matrix(3, 4, 90));
  Var b = g.leaf(random_matrix(2, 4, 91));
  Var loss = sum(row_softmax(row_cosine(a, b), 0.5)) + mse_mean(a, g.constant(random_matrix(3, 4, 92)));
  g.backward(loss);
  const Matrix ga = a.grad(), gb = b.grad();
  g.backward(loss);
  EXPECT_EQ(a.grad(), 2.0 * ga);
  EXPECT_EQ(b.grad(), 2.0 * gb);
  g.zero_grad();
  EXPECT_EQ(a.grad(), Matrix::Zero(3, 4));
}

TEST(Backward, CompositeLossMatchesFiniteDifferences) {
  const Matrix txt = random_matrix(3, 5, 101), tgt = random_matrix(4, 5, 102);
  const auto f = [&](Graph& g, Var w) {
    Var x = g.constant(random_matrix(4, 6, 100));
    Var mapped = add_row_bias(matmul(x, w), g.constant(Matrix::Constant(1, 5, 0.1)));
    Var probs = row_softmax(scale(row_cosine(mapped, g.constant(txt)), 3.0), 1.0);
    Var teacher = row_softmax(scale(row_cosine(g.constant(tgt), g.constant(txt)), 3.0), 1.0);
    return mse_mean(mapped, g.constant(tgt)) + 0.5 * cross_entropy_rows(teacher, probs) -
           scale(sum(subtract(probs, teacher)), 0.1);
  };
  EXPECT_LT(fd_error(f, random_matrix(6, 5, 103)), 1e-4);
}

TEST(Backward, FaultInjectionFlipsMatmulGradient) {
  const Matrix b = random_matrix(3, 3, 111);
  Graph g;
  g.set_faults({.flip_matmul_backward = true});
  Var a = g.leaf(random_matrix(3, 3, 110));
  g.backward(sum(matmul(a, g.constant(b))));
  const Matrix honest = Matrix::Ones(3, 3) * b.transpose();
  EXPECT_LT(zstest::rel_err(a.grad(), -honest), 1e-12);
}

TEST(Graph, RejectsNonFiniteLeaves) {
  Graph g;
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(g.leaf(bad), ValidationError);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(g.constant(bad), ValidationError);
}

TEST(Graph, BitIdenticalRecomputation) {
  auto run = [] {
    Graph g;
    Var a = g.leaf(random_matrix(5, 4, 120));
    Var b = g.leaf(random_matrix(3, 4, 121));
    Var loss = sum(row_softmax(row_cosine(a, b), 0.3)) + l1_mean(a, g.constant(random_matrix(5, 4, 122)));
    g.backward(loss);
    return std::make_tuple(loss.scalar(), Matrix(a.grad()), Matrix(b.grad()));
  };
  const auto first = run(), second = run();
  EXPECT_EQ(std::get<0>(first), std::get<0>(second));
  EXPECT_EQ(std::get<1>(first), std::get<1>(second));
  EXPECT_EQ(std::get<2>(first), std::get<2>(second));
}
