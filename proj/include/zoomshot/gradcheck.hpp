#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "zoomshot/diffcore.hpp"

namespace zoomshot {

/// Builds a scalar loss from leaves holding `inputs` (same order).
using GraphBuilder = std::function<diff::Var(diff::Graph&, const std::vector<diff::Var>&)>;

struct GradientComparison {
  double rel_error = 0.0;
  /// Smallest L1 coordinate gap at the evaluation point (+inf without L1).
  double min_l1_gap = 0.0;
  std::vector<diff::OpKind> ops;  // op kinds on the tape, in order
};

/// ||a - n|| / max(||a||, ||n||, 1e-6), Frobenius norms over all inputs.
double relative_error(const std::vector<Matrix>& analytic, const std::vector<Matrix>& numeric);

/// Analytic gradients of `build` at `inputs` against central differences.
/// Only the first `checked` inputs are differentiated; the rest enter as
/// constants.
GradientComparison compare_gradients(const std::vector<Matrix>& inputs, const GraphBuilder& build,
                                     double step = 1e-5, diff::FaultInjection faults = {},
                                     std::size_t checked = static_cast<std::size_t>(-1));

struct GradcheckOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Points whose smallest L1 gap is below this are redrawn. Central
  /// differences straddle the kink well before the gap reaches zero.
  double kink_margin = 1e-3;
  diff::FaultInjection faults;
};

struct GradcheckEntry {
  std::string check;  // op name or loss configuration
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
  std::size_t redraws = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  std::vector<std::string> ops_covered;
  bool passed() const;
  /// "check,seeds,max_rel_err,worst_seed,redraws,status" rows.
  std::string to_csv() const;
};

/// Every op of the tape, then every loss configuration with and without
/// biases, each over `seeds` random points on tiny worlds.
GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace zoomshot
