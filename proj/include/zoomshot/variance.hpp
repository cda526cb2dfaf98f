#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "zoomshot/embeddings.hpp"
#include "zoomshot/errors.hpp"

namespace zoomshot {

/// Which way the variance ratio is taken when fitting a scale.
///   Corrected: factor = sqrt(target / var), so the rescaled variance is target.
///   Literal:   factor = sqrt(var / target), the reciprocal.
enum class VarianceRatio { Corrected, Literal };

const char* to_string(VarianceRatio r);
VarianceRatio parse_variance_ratio(const std::string& s);

struct VarianceScale {
  double dataset_variance = 1.0;
  double target_variance = 1.0;
  double scale_factor = 1.0;
  VarianceRatio ratio = VarianceRatio::Corrected;
};

inline constexpr double kMinFitVariance = 1e-12;

/// Scalar latent variance: per-dimension E[v^2] - E[v]^2 over the rows,
/// averaged over dimensions. Needs at least two rows.
template <typename Derived>
double latent_variance(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() < 2)
    throw DegenerateError("variance needs at least 2 samples, got " + std::to_string(x.rows()));
  if (x.cols() < 1) throw DegenerateError("variance of a zero-dimensional set");
  // Materialized row-major copy so every caller reduces in the same order.
  const RowMatrix<double> xd = x.template cast<double>();
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = xd.colwise().sum() / n;
  const Eigen::RowVectorXd mean_sq = xd.array().square().matrix().colwise().sum() / n;
  const double var = (mean_sq.array() - mean.array().square()).mean();
  return std::max(var, 0.0);
}

double compute_variance(const EmbeddingSet& set);

/// Scale that moves `dataset_variance` onto `target_variance` (Corrected) or
/// its reciprocal (Literal). Throws DegenerateError when the variance is
/// below kMinFitVariance.
VarianceScale make_scale(double dataset_variance, double target_variance,
                         VarianceRatio ratio = VarianceRatio::Corrected);

template <typename Derived>
VarianceScale fit_scale(const Eigen::MatrixBase<Derived>& x, double target_variance,
                        VarianceRatio ratio = VarianceRatio::Corrected) {
  return make_scale(latent_variance(x), target_variance, ratio);
}

VarianceScale fit_scale(const EmbeddingSet& set, double target_variance,
                        VarianceRatio ratio = VarianceRatio::Corrected);

/// Every vector multiplied by the scale factor; labels and metadata unchanged.
EmbeddingSet apply_scale(const EmbeddingSet& set, const VarianceScale& s);

template <typename Derived>
auto apply_scale(const Eigen::MatrixBase<Derived>& x, const VarianceScale& s) {
  return (x * s.scale_factor).eval();
}

}  // namespace zoomshot
