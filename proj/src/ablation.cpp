#include "zoomshot/ablation.hpp"

#include <sstream>

#include "zoomshot/digest.hpp"
#include "zoomshot/errors.hpp"

namespace zoomshot {

std::vector<AblationRow> run_ablation(const AblationInputs& in, const TrainConfig& base,
                                      const EvalOptions& eval_opts) {
  if (!in.student_train || !in.teacher_train || !in.prompts || !in.student_eval || !in.class_emb)
    throw UsageError("ablation needs training data, prompts, an eval set and class embeddings");
  std::vector<AblationRow> rows;
  for (const LossCombo& combo : kAblationCombos) {
    TrainConfig cfg = base;
    const LossConfig picked = LossConfig::from_list(combo.losses);
    cfg.loss.use_mse = picked.use_mse;
    cfg.loss.use_cc = picked.use_cc;
    cfg.loss.use_pgkd = picked.use_pgkd;
    const TrainResult run = train(*in.student_train, *in.teacher_train, in.prompts, cfg);
    const ModelScales scales = to_model_scales(run.scales);
    rows.push_back({combo.name,
                    eval_forward(run.maps, scales, *in.student_eval, *in.class_emb, eval_opts).top1_accuracy,
                    eval_inverse(run.maps, scales, *in.student_eval, *in.class_emb, eval_opts).top1_accuracy});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "combo,top1_forward,top1_inverse\n";
  for (const auto& r : rows)
    os << r.combo << ',' << format_double(r.top1_forward) << ',' << format_double(r.top1_inverse) << '\n';
  return os.str();
}

}  // namespace zoomshot
