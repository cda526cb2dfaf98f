#include "zoomshot/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "zoomshot/binary_io.hpp"
#include "zoomshot/digest.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/rng.hpp"

namespace zoomshot {

namespace {
// Stream tags for derive_seed; each consumer of randomness gets its own.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSubsampleStream = 2;
constexpr std::uint64_t kEpochStreamBase = 1000;
}  // namespace

const char* to_string(InitScheme s) { return s == InitScheme::Identity ? "identity" : "uniform"; }

InitScheme parse_init_scheme(const std::string& s) {
  if (s == "uniform") return InitScheme::FanInUniform;
  if (s == "identity") return InitScheme::Identity;
  throw ConfigError("init must be uniform|identity, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("learning rate must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(target_variance > 0.0) || !std::isfinite(target_variance))
    throw ConfigError("target variance must be > 0");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0))
    throw ConfigError("data fraction must lie in (0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  loss.validate();
}

std::string config_digest(const TrainConfig& cfg) {
  nlohmann::json j;
  j["lr0"] = cfg.lr0;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["target_variance"] = cfg.target_variance;
  j["seed"] = cfg.seed;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["data_fraction"] = cfg.data_fraction;
  j["affine"] = cfg.affine;
  j["variance_ratio"] = to_string(cfg.variance_ratio);
  j["init"] = to_string(cfg.init);
  j["loss"] = {
      {"use_mse", cfg.loss.use_mse},
      {"use_cc", cfg.loss.use_cc},
      {"use_pgkd", cfg.loss.use_pgkd},
      {"weight_mse", cfg.loss.weight_mse},
      {"weight_cc", cfg.loss.weight_cc},
      {"weight_pgkd", cfg.loss.weight_pgkd},
      {"pgkd_metric", to_string(cfg.loss.pgkd_metric)},
      {"kd_temperature", cfg.loss.kd_temperature},
      {"logit_scale", cfg.loss.logit_scale},
      {"pgkd_on_probabilities", cfg.loss.pgkd_on_probabilities},
      {"kd_t2_correction", cfg.loss.kd_t2_correction},
  };
  return j.dump();
}

std::string TrainReport::to_csv(bool include_timing) const {
  std::ostringstream out;
  out << "step,epoch,lr,total,mse,cc,pgkd" << (include_timing ? ",wall_ms" : "") << "\n";
  for (const StepRecord& r : steps) {
    out << r.step << ',' << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.total)
        << ',' << format_double(r.mse) << ',' << format_double(r.cc) << ','
        << format_double(r.pgkd);
    if (include_timing) out << ',' << format_double(r.wall_ms);
    out << '\n';
  }
  return out.str();
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0 || step >= total_steps)
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + ")");
  if (total_steps == 1) return lr0;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(total_steps - 1);
  return lr0 * 0.5 * (1.0 + std::cos(phase));
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
               AdamState& state, double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw UsageError("adam_step: params/grads count differ");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw UsageError("adam_step: state size differs");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& p = *params[k];
    const Matrix& g = *grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[k].rows() != p.rows() ||
        state.m[k].cols() != p.cols())
      throw UsageError("adam_step: shape mismatch for parameter " + std::to_string(k));
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& g = *grads[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / correction1;
    const auto v_hat = v.array() / correction2;
    params[k]->array() -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
  }
}

LinearMapPair init_maps(Eigen::Index m, Eigen::Index d, InitScheme scheme, bool affine,
                        std::uint64_t seed) {
  if (m < 1 || d < 1) throw ConfigError("map dimensions must be >= 1");
  LinearMapPair maps;
  if (scheme == InitScheme::Identity) {
    if (m != d)
      throw ConfigError("identity init needs m == d, got m=" + std::to_string(m) +
                        " d=" + std::to_string(d));
    maps = LinearMapPair::identity(m, affine);
    return maps;
  }
  Xoshiro256 rng(derive_seed(seed, kInitStream));
  auto uniform_fill = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
    return w;
  };
  maps.w_fwd = uniform_fill(d, m, 1.0 / std::sqrt(static_cast<double>(m)));
  maps.w_inv = uniform_fill(m, d, 1.0 / std::sqrt(static_cast<double>(d)));
  if (affine) {
    maps.b_fwd = Vector::Zero(d);
    maps.b_inv = Vector::Zero(m);
  }
  return maps;
}

std::string parameter_checksum(const LinearMapPair& maps) {
  binio::ByteWriter w;
  auto put = [&w](const auto& mat) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) w.f64(mat(i, j));
  };
  put(maps.w_fwd);
  if (maps.b_fwd) put(*maps.b_fwd);
  put(maps.w_inv);
  if (maps.b_inv) put(*maps.b_inv);
  return sha256_hex(w.data());
}

namespace {

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = source.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

}  // namespace

TrainResult train(const EmbeddingSet& student_imgs, const EmbeddingSet& teacher_imgs,
                  const PromptBank* prompts, const TrainConfig& cfg) {
  cfg.validate();
  validate(student_imgs);
  validate(teacher_imgs);
  if (student_imgs.size() != teacher_imgs.size())
    throw PairingError("student images (" + std::to_string(student_imgs.size()) +
                       ") and teacher images (" + std::to_string(teacher_imgs.size()) +
                       ") must come from the same image list");
  if (student_imgs.modality != Modality::Image || teacher_imgs.modality != Modality::Image)
    throw ValidationError("training image sets must have image modality");
  const auto m = static_cast<Eigen::Index>(student_imgs.dim());
  const auto d = static_cast<Eigen::Index>(teacher_imgs.dim());
  if (cfg.loss.needs_prompts() && prompts == nullptr)
    throw ConfigError("cycle-consistency and PG-KD need a teacher prompt bank");
  if (prompts) {
    prompts->validate(d);
    if (prompts->teacher_text.modality != Modality::Text)
      throw ValidationError("prompt bank must have text modality");
  }

  const auto keep = subsample_indices(student_imgs.size(), cfg.data_fraction,
                                      derive_seed(cfg.seed, kSubsampleStream));
  Matrix student = gather_rows(student_imgs.to_double(), keep);
  Matrix teacher = gather_rows(teacher_imgs.to_double(), keep);

  TrainResult result;
  result.scales.student = fit_scale(student, cfg.target_variance, cfg.variance_ratio);
  result.scales.teacher_img = fit_scale(teacher, cfg.target_variance, cfg.variance_ratio);
  Matrix text;
  if (prompts) {
    text = prompts->teacher_text.to_double();
    result.scales.teacher_txt = fit_scale(text, cfg.target_variance, cfg.variance_ratio);
    text *= result.scales.teacher_txt.scale_factor;
  } else {
    result.scales.teacher_txt = VarianceScale{cfg.target_variance, cfg.target_variance, 1.0,
                                              cfg.variance_ratio};
  }
  student *= result.scales.student.scale_factor;
  teacher *= result.scales.teacher_img.scale_factor;

  LinearMapPair maps = init_maps(m, d, cfg.init, cfg.affine, cfg.seed);

  const std::size_t n = keep.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * per_epoch;
  TrainReport& report = result.report;
  report.n_effective = n;
  report.steps_per_epoch = per_epoch;
  report.steps.reserve(total_steps);

  const AdamHyper hyper{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  AdamState adam;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BatchPlan plan =
        make_batches(n, cfg.batch_size, derive_seed(cfg.seed, kEpochStreamBase + epoch));
    for (std::size_t b = 0; b < plan.batch_count(); ++b, ++step) {
      const auto started = std::chrono::steady_clock::now();
      const auto rows = plan.batch(b);

      diff::Graph graph;
      const MapVars vars = bind_maps(graph, maps);
      diff::Var student_batch = graph.constant(gather_rows(student, rows));
      diff::Var teacher_batch = graph.constant(gather_rows(teacher, rows));
      diff::Var prompt_var = prompts ? graph.constant(text) : diff::Var{};
      const LossTerms terms = total_loss(vars, student_batch, teacher_batch, prompt_var, cfg.loss);
      graph.backward(terms.total);
      const LinearMapPair grads = map_gradients(vars);

      const double lr = cosine_lr(step, total_steps, cfg.lr0);
      std::vector<Matrix*> params{&maps.w_fwd, &maps.w_inv};
      std::vector<const Matrix*> grad_ptrs{&grads.w_fwd, &grads.w_inv};
      // Biases are stored as row vectors; view them as 1 x k matrices.
      Matrix b_fwd, b_inv, gb_fwd, gb_inv;
      if (maps.affine()) {
        b_fwd = *maps.b_fwd;
        b_inv = *maps.b_inv;
        gb_fwd = *grads.b_fwd;
        gb_inv = *grads.b_inv;
        params.push_back(&b_fwd);
        params.push_back(&b_inv);
        grad_ptrs.push_back(&gb_fwd);
        grad_ptrs.push_back(&gb_inv);
      }
      adam_step(params, grad_ptrs, adam, lr, hyper);
      if (maps.affine()) {
        *maps.b_fwd = b_fwd.row(0);
        *maps.b_inv = b_inv.row(0);
      }

      const auto elapsed = std::chrono::steady_clock::now() - started;
      report.steps.push_back(StepRecord{
          step, epoch, lr, terms.total.scalar(), terms.mse, terms.cc, terms.pgkd,
          std::chrono::duration<double, std::milli>(elapsed).count()});
    }
  }
  if (!maps.w_fwd.allFinite() || !maps.w_inv.allFinite())
    throw DegenerateError("training diverged: parameters are no longer finite");
  report.param_checksum = parameter_checksum(maps);
  result.maps = std::move(maps);
  return result;
}

}  // namespace zoomshot
