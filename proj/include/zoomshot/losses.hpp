#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "zoomshot/diffcore.hpp"
#include "zoomshot/embeddings.hpp"
#include "zoomshot/types.hpp"

namespace zoomshot {

/// Learned maps between the student space (dim m) and the teacher space (dim d).
/// h(x) = W_fwd x + b_fwd and h_inv(t) = W_inv t + b_inv, applied row-wise.
/// W_inv is trained independently; it is never a matrix inverse of W_fwd.
struct LinearMapPair {
  Matrix w_fwd;  // d x m
  Matrix w_inv;  // m x d
  std::optional<Vector> b_fwd;  // length d
  std::optional<Vector> b_inv;  // length m

  Eigen::Index m() const { return w_fwd.cols(); }
  Eigen::Index d() const { return w_fwd.rows(); }
  bool affine() const { return b_fwd.has_value(); }

  /// Student rows [n x m] -> teacher space [n x d].
  Matrix forward(const Matrix& student) const;
  /// Teacher rows [n x d] -> student space [n x m].
  Matrix inverse(const Matrix& teacher) const;

  /// Throws ValidationError on inconsistent shapes or non-finite entries.
  void validate() const;

  static LinearMapPair identity(Eigen::Index dim, bool affine = false);
};

enum class PgkdMetric { LogitMatch, HighTempCE };

const char* to_string(PgkdMetric m);
PgkdMetric parse_pgkd_metric(const std::string& s);  // "lm" | "htce"

struct LossConfig {
  bool use_mse = true;
  bool use_cc = true;
  bool use_pgkd = true;
  double weight_mse = 1.0;
  double weight_cc = 1.0;
  double weight_pgkd = 1.0;
  PgkdMetric pgkd_metric = PgkdMetric::LogitMatch;
  double kd_temperature = 20.0;
  double logit_scale = 1.0;
  /// Logit matching compares softmax outputs (true) or raw scaled cosines (false).
  bool pgkd_on_probabilities = true;
  /// Multiply the high-temperature CE term by T^2 (classic KD gradient correction).
  bool kd_t2_correction = false;

  bool mse_active() const { return use_mse && weight_mse > 0.0; }
  bool cc_active() const { return use_cc && weight_cc > 0.0; }
  bool pgkd_active() const { return use_pgkd && weight_pgkd > 0.0; }
  bool needs_prompts() const { return cc_active() || pgkd_active(); }

  /// Throws ConfigError when no term is active or a value is out of range.
  void validate() const;

  /// Parses a comma list drawn from {mse, cc, pgkd}; "all" enables all three.
  static LossConfig from_list(const std::string& list);
  std::string list() const;
};

/// Teacher text embeddings of the training prompts.
struct PromptBank {
  EmbeddingSet teacher_text;
  std::filesystem::path source;

  std::size_t size() const { return teacher_text.size(); }
  /// Throws ConfigError for fewer than two prompts, ShapeError on a dim mismatch.
  void validate(Eigen::Index teacher_dim) const;
};

/// Map parameters bound into a graph. The weight leaves hold the transposed
/// matrices (W_fwd^T is m x d) so that row batches multiply on the right.
struct MapVars {
  diff::Var fwd_t;
  diff::Var inv_t;
  std::optional<diff::Var> fwd_bias;
  std::optional<diff::Var> inv_bias;
};

MapVars bind_maps(diff::Graph& graph, const LinearMapPair& maps, bool trainable = true);
/// Reads the accumulated gradients back in LinearMapPair layout.
LinearMapPair map_gradients(const MapVars& vars);

diff::Var apply_forward(const MapVars& maps, diff::Var student);
diff::Var apply_inverse(const MapVars& maps, diff::Var teacher);

/// Reconstruction: mean_i ||h(s_i) - t_i||^2. Rows must describe the same images.
diff::Var loss_mse(const MapVars& maps, diff::Var student, diff::Var teacher_img);

/// Cycle consistency, three L1 terms each averaged over its own rows:
/// h_inv(h(Vs)) vs Vs, h(h_inv(Vt)) vs Vt, h(h_inv(Tt)) vs Tt.
diff::Var loss_cycle(const MapVars& maps, diff::Var student, diff::Var teacher_img,
                     diff::Var prompts);

struct ZeroShotOutput {
  diff::Var logits;  // logit_scale * cosine, [n x c]
  diff::Var probs;   // row softmax of logits / temperature
};

ZeroShotOutput zero_shot_logits(diff::Var img, diff::Var txt, double logit_scale,
                                double temperature);

/// Prompt-guided distillation: the teacher classifier S_t(Vt, Tt) against
/// S1(h(Vs), Tt), S2(Vs, h_inv(Tt)) and S3(h_inv(Vt), h_inv(Tt)), summed.
diff::Var loss_pgkd(const MapVars& maps, diff::Var student, diff::Var teacher_img,
                    diff::Var prompts, const LossConfig& cfg);

struct LossTerms {
  diff::Var total;
  // Weighted contributions; they sum to total. Inactive terms report 0.
  double mse = 0.0;
  double cc = 0.0;
  double pgkd = 0.0;
};

/// Weighted sum of the active terms. `prompts` may be an invalid Var when
/// neither CC nor PG-KD is active.
LossTerms total_loss(const MapVars& maps, diff::Var student, diff::Var teacher_img,
                     diff::Var prompts, const LossConfig& cfg);

}  // namespace zoomshot
