#include "zoomshot/variance.hpp"

namespace zoomshot {

const char* to_string(VarianceRatio r) {
  return r == VarianceRatio::Corrected ? "corrected" : "literal";
}

VarianceRatio parse_variance_ratio(const std::string& s) {
  if (s == "corrected") return VarianceRatio::Corrected;
  if (s == "literal") return VarianceRatio::Literal;
  throw ConfigError("variance ratio must be corrected|literal, got '" + s + "'");
}

double compute_variance(const EmbeddingSet& set) { return latent_variance(set.to_double()); }

VarianceScale make_scale(double dataset_variance, double target_variance, VarianceRatio ratio) {
  if (!(target_variance > 0.0) || !std::isfinite(target_variance))
    throw ConfigError("target variance must be > 0, got " + std::to_string(target_variance));
  if (!(dataset_variance > kMinFitVariance))
    throw DegenerateError("dataset variance " + std::to_string(dataset_variance) +
                          " is too small to rescale");
  VarianceScale s;
  s.dataset_variance = dataset_variance;
  s.target_variance = target_variance;
  s.ratio = ratio;
  s.scale_factor = ratio == VarianceRatio::Corrected ? std::sqrt(target_variance / dataset_variance)
                                                     : std::sqrt(dataset_variance / target_variance);
  return s;
}

VarianceScale fit_scale(const EmbeddingSet& set, double target_variance, VarianceRatio ratio) {
  return make_scale(compute_variance(set), target_variance, ratio);
}

EmbeddingSet apply_scale(const EmbeddingSet& set, const VarianceScale& s) {
  if (!(s.scale_factor > 0.0) || !std::isfinite(s.scale_factor))
    throw ValidationError("scale factor must be positive and finite");
  EmbeddingSet out = set;
  out.vectors = (set.vectors.cast<double>() * s.scale_factor).cast<float>();
  return out;
}

}  // namespace zoomshot
