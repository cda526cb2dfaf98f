#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/variance.hpp"

using namespace zoomshot;

namespace {

// Mean first, then squared deviations, per dimension.
double two_pass_variance(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) acc += (x(i, j) - mean(j)) * (x(i, j) - mean(j));
    total += acc / static_cast<double>(x.rows());
  }
  return total / static_cast<double>(x.cols());
}

EmbeddingSet as_set(const Matrix& m) {
  EmbeddingSet s;
  s.vectors = m.cast<float>();
  return s;
}

}  // namespace

TEST(Variance, ConstantIsZero) { EXPECT_EQ(latent_variance(Matrix::Constant(10, 3, 2.5)), 0.0); }

TEST(Variance, PlusMinusOne) {
  Matrix x(2, 1);
  x << -1, 1;
  EXPECT_EQ(latent_variance(x), 1.0);
}

TEST(Variance, MatchesTwoPassOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix x = zstest::random_matrix(100, 16, seed, 1.7);
    x.rowwise() += zstest::random_matrix(1, 16, seed + 100, 3.0).row(0);
    const double oracle = two_pass_variance(x);
    EXPECT_LT(std::abs(latent_variance(x) - oracle) / oracle, 1e-9);
  }
}

TEST(Variance, PermutationInvariant) {
  const Matrix x = zstest::random_matrix(40, 5, 3);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(40);
  perm.setIdentity();
  std::reverse(perm.indices().data(), perm.indices().data() + 40);
  EXPECT_NEAR(latent_variance(x), latent_variance(Matrix(perm * x)), 1e-15);
}

TEST(Variance, NeedsTwoRows) {
  EXPECT_THROW(latent_variance(Matrix::Ones(1, 4)), DegenerateError);
  EXPECT_THROW(compute_variance(as_set(Matrix::Ones(1, 4))), DegenerateError);
}

TEST(FitScale, Examples) {
  EXPECT_EQ(make_scale(4.5, 4.5).scale_factor, 1.0);
  EXPECT_EQ(make_scale(1.0, 4.0).scale_factor, 2.0);
  EXPECT_EQ(make_scale(1.0, 4.0, VarianceRatio::Literal).scale_factor, 0.5);
}

TEST(FitScale, NearZeroVarianceIsDegenerate) {
  EXPECT_THROW(fit_scale(Matrix::Constant(5, 2, 1.0), 4.5), DegenerateError);
}

TEST(FitScale, ApplyThenRecomputeHitsTarget) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix x = zstest::random_matrix(64, 12, seed, 0.05 + 0.3 * static_cast<double>(seed));
    const VarianceScale s = fit_scale(x, 4.5);
    EXPECT_LT(std::abs(latent_variance(apply_scale(x, s)) - 4.5) / 4.5, 1e-6);
    // Through the float32 storage path as well.
    const EmbeddingSet scaled = apply_scale(as_set(x), fit_scale(as_set(x), 4.5));
    EXPECT_LT(std::abs(compute_variance(scaled) - 4.5) / 4.5, 1e-6);
  }
}

TEST(FitScale, LiteralIsReciprocalOfCorrected) {
  const Matrix x = zstest::random_matrix(30, 7, 11, 0.2);
  const double c = fit_scale(x, 4.5).scale_factor;
  const double l = fit_scale(x, 4.5, VarianceRatio::Literal).scale_factor;
  EXPECT_NEAR(c * l, 1.0, 1e-12);
}

TEST(ApplyScale, Examples) {
  Matrix x(1, 2);
  x << 1, 2;
  VarianceScale two;
  two.scale_factor = 2.0;
  EXPECT_EQ(apply_scale(x, two), Matrix(2.0 * x));
  VarianceScale one;
  EXPECT_EQ(apply_scale(x, one), x);
}

TEST(ApplyScale, PreservesCosinesAndMetadata) {
  const Matrix x = zstest::random_matrix(6, 5, 12);
  VarianceScale s;
  s.scale_factor = 3.7;
  const Matrix y = apply_scale(x, s);
  const Matrix xn = x.rowwise().normalized(), yn = y.rowwise().normalized();
  EXPECT_LT(((xn * xn.transpose()) - (yn * yn.transpose())).cwiseAbs().maxCoeff(), 1e-12);

  EmbeddingSet set = as_set(x);
  set.labels = std::vector<std::uint32_t>(6, 1);
  set.class_names = {"a", "b"};
  set.encoder_name = "e";
  const EmbeddingSet out = apply_scale(set, s);
  EXPECT_EQ(out.labels, set.labels);
  EXPECT_EQ(out.class_names, set.class_names);
  EXPECT_EQ(out.encoder_name, "e");
}

TEST(VarianceRatio, Parse) {
  EXPECT_EQ(parse_variance_ratio("corrected"), VarianceRatio::Corrected);
  EXPECT_EQ(parse_variance_ratio("literal"), VarianceRatio::Literal);
  EXPECT_THROW(parse_variance_ratio("other"), ConfigError);
}
