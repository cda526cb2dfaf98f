#include "zoomshot/losses.hpp"

#include <sstream>

#include "zoomshot/errors.hpp"

namespace zoomshot {

using diff::Var;

Matrix LinearMapPair::forward(const Matrix& student) const {
  if (student.cols() != m())
    throw ShapeError("forward map expects dim " + std::to_string(m()) + ", got " +
                     std::to_string(student.cols()));
  Matrix out = student * w_fwd.transpose();
  if (b_fwd) out.rowwise() += *b_fwd;
  return out;
}

Matrix LinearMapPair::inverse(const Matrix& teacher) const {
  if (teacher.cols() != d())
    throw ShapeError("inverse map expects dim " + std::to_string(d()) + ", got " +
                     std::to_string(teacher.cols()));
  Matrix out = teacher * w_inv.transpose();
  if (b_inv) out.rowwise() += *b_inv;
  return out;
}

void LinearMapPair::validate() const {
  if (w_fwd.size() == 0) throw ValidationError("empty forward map");
  if (w_inv.rows() != m() || w_inv.cols() != d())
    throw ValidationError("inverse map is " + diff::shape_string(w_inv) + ", expected [" +
                          std::to_string(m()) + "x" + std::to_string(d()) + "]");
  if (b_fwd.has_value() != b_inv.has_value()) throw ValidationError("bias presence differs");
  if (b_fwd && (b_fwd->size() != d() || b_inv->size() != m()))
    throw ValidationError("bias length mismatch");
  if (!w_fwd.allFinite() || !w_inv.allFinite() || (b_fwd && (!b_fwd->allFinite() || !b_inv->allFinite())))
    throw ValidationError("map parameters contain NaN or Inf");
}

LinearMapPair LinearMapPair::identity(Eigen::Index dim, bool affine) {
  LinearMapPair maps;
  maps.w_fwd = Matrix::Identity(dim, dim);
  maps.w_inv = Matrix::Identity(dim, dim);
  if (affine) {
    maps.b_fwd = Vector::Zero(dim);
    maps.b_inv = Vector::Zero(dim);
  }
  return maps;
}

const char* to_string(PgkdMetric m) { return m == PgkdMetric::LogitMatch ? "lm" : "htce"; }

PgkdMetric parse_pgkd_metric(const std::string& s) {
  if (s == "lm") return PgkdMetric::LogitMatch;
  if (s == "htce") return PgkdMetric::HighTempCE;
  throw ConfigError("pgkd metric must be lm|htce, got '" + s + "'");
}

void LossConfig::validate() const {
  for (double w : {weight_mse, weight_cc, weight_pgkd})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  if (!mse_active() && !cc_active() && !pgkd_active())
    throw ConfigError("no loss term is enabled");
  if (!(kd_temperature > 0.0) || !std::isfinite(kd_temperature))
    throw ConfigError("kd temperature must be > 0");
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale))
    throw ConfigError("logit scale must be > 0");
}

LossConfig LossConfig::from_list(const std::string& list) {
  LossConfig cfg;
  cfg.use_mse = cfg.use_cc = cfg.use_pgkd = false;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "mse") cfg.use_mse = true;
    else if (item == "cc") cfg.use_cc = true;
    else if (item == "pgkd") cfg.use_pgkd = true;
    else if (item == "all") cfg.use_mse = cfg.use_cc = cfg.use_pgkd = true;
    else throw ConfigError("unknown loss '" + item + "' (expected mse, cc, pgkd)");
  }
  if (!cfg.use_mse && !cfg.use_cc && !cfg.use_pgkd) throw ConfigError("empty loss list");
  return cfg;
}

std::string LossConfig::list() const {
  std::string out;
  auto add = [&out](const char* name) { out += out.empty() ? name : std::string(",") + name; };
  if (use_mse) add("mse");
  if (use_cc) add("cc");
  if (use_pgkd) add("pgkd");
  return out;
}

void PromptBank::validate(Eigen::Index teacher_dim) const {
  if (teacher_text.size() < 2)
    throw ConfigError("prompt bank needs at least 2 prompts, got " + std::to_string(teacher_text.size()));
  if (static_cast<Eigen::Index>(teacher_text.dim()) != teacher_dim)
    throw ShapeError("prompt bank dim " + std::to_string(teacher_text.dim()) +
                     " != teacher dim " + std::to_string(teacher_dim));
}

MapVars bind_maps(diff::Graph& graph, const LinearMapPair& maps, bool trainable) {
  maps.validate();
  MapVars vars;
  vars.fwd_t = graph.leaf(maps.w_fwd.transpose(), trainable);
  vars.inv_t = graph.leaf(maps.w_inv.transpose(), trainable);
  if (maps.b_fwd) {
    vars.fwd_bias = graph.leaf(Matrix(*maps.b_fwd), trainable);
    vars.inv_bias = graph.leaf(Matrix(*maps.b_inv), trainable);
  }
  return vars;
}

LinearMapPair map_gradients(const MapVars& vars) {
  LinearMapPair g;
  g.w_fwd = vars.fwd_t.grad().transpose();
  g.w_inv = vars.inv_t.grad().transpose();
  if (vars.fwd_bias) {
    g.b_fwd = Vector(vars.fwd_bias->grad().row(0));
    g.b_inv = Vector(vars.inv_bias->grad().row(0));
  }
  return g;
}

Var apply_forward(const MapVars& maps, Var student) {
  Var out = diff::matmul(student, maps.fwd_t);
  return maps.fwd_bias ? diff::add_row_bias(out, *maps.fwd_bias) : out;
}

Var apply_inverse(const MapVars& maps, Var teacher) {
  Var out = diff::matmul(teacher, maps.inv_t);
  return maps.inv_bias ? diff::add_row_bias(out, *maps.inv_bias) : out;
}

namespace {

void require_paired(Var student, Var teacher_img) {
  if (student.rows() != teacher_img.rows())
    throw PairingError("student batch has " + std::to_string(student.rows()) +
                       " rows but teacher image batch has " + std::to_string(teacher_img.rows()));
}

void require_prompts(Var prompts, std::size_t minimum) {
  if (!prompts.valid() || static_cast<std::size_t>(prompts.rows()) < minimum)
    throw ConfigError("prompt bank needs at least " + std::to_string(minimum) + " prompt(s)");
}

}  // namespace

Var loss_mse(const MapVars& maps, Var student, Var teacher_img) {
  require_paired(student, teacher_img);
  return diff::mse_mean(apply_forward(maps, student), teacher_img);
}

Var loss_cycle(const MapVars& maps, Var student, Var teacher_img, Var prompts) {
  require_prompts(prompts, 1);
  Var student_cycle = diff::l1_mean(apply_inverse(maps, apply_forward(maps, student)), student);
  Var image_cycle = diff::l1_mean(apply_forward(maps, apply_inverse(maps, teacher_img)), teacher_img);
  Var text_cycle = diff::l1_mean(apply_forward(maps, apply_inverse(maps, prompts)), prompts);
  return student_cycle + image_cycle + text_cycle;
}

ZeroShotOutput zero_shot_logits(Var img, Var txt, double logit_scale, double temperature) {
  Var cosine = diff::row_cosine(img, txt);
  Var logits = logit_scale == 1.0 ? cosine : diff::scale(cosine, logit_scale);
  return {logits, diff::row_softmax(logits, temperature)};
}

Var loss_pgkd(const MapVars& maps, Var student, Var teacher_img, Var prompts,
              const LossConfig& cfg) {
  require_prompts(prompts, 2);
  require_paired(student, teacher_img);

  const bool ce = cfg.pgkd_metric == PgkdMetric::HighTempCE;
  const double temperature = ce ? cfg.kd_temperature : 1.0;
  const double scale = cfg.logit_scale;

  // S_t is built from detached copies so no gradient reaches the teacher.
  diff::Graph& g = teacher_img.graph();
  const ZeroShotOutput teacher =
      zero_shot_logits(g.constant(teacher_img.value()), g.constant(prompts.value()), scale, temperature);
  Var mapped_prompts = apply_inverse(maps, prompts);
  const ZeroShotOutput students[3] = {
      zero_shot_logits(apply_forward(maps, student), prompts, scale, temperature),
      zero_shot_logits(student, mapped_prompts, scale, temperature),
      zero_shot_logits(apply_inverse(maps, teacher_img), mapped_prompts, scale, temperature),
  };

  Var total;
  for (const ZeroShotOutput& s : students) {
    Var term;
    if (ce) {
      term = diff::cross_entropy_rows(teacher.probs, s.probs);
      if (cfg.kd_t2_correction) term = diff::scale(term, temperature * temperature);
    } else if (cfg.pgkd_on_probabilities) {
      term = diff::l1_mean(teacher.probs, s.probs);
    } else {
      term = diff::l1_mean(teacher.logits, s.logits);
    }
    total = total.valid() ? total + term : term;
  }
  return total;
}

LossTerms total_loss(const MapVars& maps, Var student, Var teacher_img, Var prompts,
                     const LossConfig& cfg) {
  cfg.validate();
  LossTerms terms;
  auto accumulate = [&terms](Var raw, double weight, double& slot) {
    Var weighted = weight == 1.0 ? raw : diff::scale(raw, weight);
    slot = weighted.scalar();
    terms.total = terms.total.valid() ? terms.total + weighted : weighted;
  };
  if (cfg.mse_active()) accumulate(loss_mse(maps, student, teacher_img), cfg.weight_mse, terms.mse);
  if (cfg.cc_active())
    accumulate(loss_cycle(maps, student, teacher_img, prompts), cfg.weight_cc, terms.cc);
  if (cfg.pgkd_active())
    accumulate(loss_pgkd(maps, student, teacher_img, prompts, cfg), cfg.weight_pgkd, terms.pgkd);
  return terms;
}

}  // namespace zoomshot
