#pragma once

#include <array>
#include <string>
#include <vector>

#include "zoomshot/trainer.hpp"
#include "zoomshot/zeroshot.hpp"

namespace zoomshot {

struct LossCombo {
  const char* name;
  const char* losses;  // LossConfig::from_list syntax
};

/// The seven loss combinations, in reporting order.
inline constexpr std::array<LossCombo, 7> kAblationCombos{{
    {"MSE", "mse"},
    {"MSE+PG-KD", "mse,pgkd"},
    {"MSE+CC", "mse,cc"},
    {"PG-KD", "pgkd"},
    {"CC", "cc"},
    {"CC+PG-KD", "cc,pgkd"},
    {"All", "mse,cc,pgkd"},
}};

struct AblationRow {
  std::string combo;
  double top1_forward = 0.0;
  double top1_inverse = 0.0;
};

struct AblationInputs {
  const EmbeddingSet* student_train = nullptr;
  const EmbeddingSet* teacher_train = nullptr;
  const PromptBank* prompts = nullptr;
  const EmbeddingSet* student_eval = nullptr;  // labeled
  const Matrix* class_emb = nullptr;
};

/// Trains every combination from `base` (same seed, same data), evaluating
/// each on the shared eval set in both directions. Only `base.loss.use_*`
/// are replaced per combination.
std::vector<AblationRow> run_ablation(const AblationInputs& in, const TrainConfig& base,
                                      const EvalOptions& eval_opts = {});

/// "combo,top1_forward,top1_inverse" rows.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace zoomshot
