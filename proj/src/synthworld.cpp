#include "zoomshot/synthworld.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <Eigen/QR>

#include "zoomshot/binary_io.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/rng.hpp"

namespace zoomshot {

namespace {

constexpr double kMaxPrototypeCosine = 0.8;
constexpr int kPrototypeAttempts = 20000;

constexpr std::uint64_t kBasisStream = 11;
constexpr std::uint64_t kPrototypeStream = 12;
constexpr std::uint64_t kTrainStream = 13;
constexpr std::uint64_t kEvalStream = 14;
constexpr std::uint64_t kPromptStream = 15;
constexpr std::uint64_t kTemplateStream = 16;

const char* const kTemplatePool[] = {
    "a photo of a {}.",      "an image of a {}.",   "a blurry photo of a {}.",
    "a close-up photo of a {}.", "a rendering of a {}.", "a sketch of a {}.",
    "a bright photo of a {}.",   "a cropped photo of a {}.",
};

Matrix orthonormal_columns(Eigen::Index rows, Eigen::Index cols, Xoshiro256& rng) {
  const Matrix gaussian = normal_matrix(rows, cols, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  return Eigen::MatrixXd(qr.householderQ()) .leftCols(cols);
}

FloatMatrix to_float(const Matrix& m) { return m.cast<float>(); }

}  // namespace

void WorldSpec::validate() const {
  if (m < 1 || d < 1) throw ConfigError("world dims must be >= 1");
  if (classes < 2) throw ConfigError("a world needs at least 2 classes");
  if (n_train < classes) throw ConfigError("n_train must be >= class count");
  if (n_eval < 1) throw ConfigError("n_eval must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise must be >= 0");
  if (!(gap_offset >= 0.0) || !std::isfinite(gap_offset)) throw ConfigError("gap must be >= 0");
  if (!(condition_bound >= 1.0) || !std::isfinite(condition_bound))
    throw ConfigError("condition bound must be >= 1");
  if (n_prompts < 2) throw ConfigError("a world needs at least 2 training prompts");
  if (n_templates < 1) throw ConfigError("a world needs at least 1 template");
}

World generate_world(const WorldSpec& spec) {
  spec.validate();
  const Eigen::Index r = std::min(spec.m, spec.d);
  const auto c = static_cast<Eigen::Index>(spec.classes);

  // Planted map A = U diag(s) V^T with singular values spread geometrically
  // over [1, condition_bound].
  Xoshiro256 basis_rng(derive_seed(spec.seed, kBasisStream));
  const Matrix u_basis = orthonormal_columns(spec.d, r, basis_rng);  // d x r, spans the image subspace
  const Matrix v_basis = orthonormal_columns(spec.m, r, basis_rng);  // m x r
  Eigen::VectorXd singular(r);
  for (Eigen::Index i = 0; i < r; ++i)
    singular(i) = r == 1 ? 1.0 : std::pow(spec.condition_bound, static_cast<double>(i) / static_cast<double>(r - 1));
  const Matrix a = u_basis * singular.asDiagonal() * v_basis.transpose();
  const Matrix a_pinv = v_basis * singular.cwiseInverse().asDiagonal() * u_basis.transpose();

  // Gap direction: orthogonal to the image subspace when there is room.
  Vector gap;
  if (spec.d > r) {
    const Matrix full = orthonormal_columns(spec.d, spec.d, basis_rng);
    Eigen::VectorXd candidate = full.col(r);
    for (int attempt = 0; attempt < 8; ++attempt) {
      candidate -= u_basis * (u_basis.transpose() * candidate);
      if (candidate.norm() > 1e-6) break;
      candidate = normal_matrix(spec.d, 1, basis_rng).col(0);
    }
    gap = candidate.normalized().transpose();
  } else {
    gap = normal_matrix(1, spec.d, basis_rng).row(0).normalized();
  }

  // Unit prototypes inside the image subspace, pairwise cosine < 0.8.
  Xoshiro256 proto_rng(derive_seed(spec.seed, kPrototypeStream));
  Matrix prototypes(c, spec.d);
  for (Eigen::Index k = 0; k < c; ++k) {
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt == kPrototypeAttempts)
        throw ConfigError("cannot place " + std::to_string(c) + " separated prototypes in " +
                          std::to_string(r) + " dimensions");
      const Eigen::VectorXd z = normal_matrix(r, 1, proto_rng).col(0);
      if (z.norm() == 0.0) continue;
      const Vector p = (u_basis * z.normalized()).transpose();
      bool ok = true;
      for (Eigen::Index j = 0; j < k && ok; ++j) ok = p.dot(prototypes.row(j)) < kMaxPrototypeCosine;
      if (ok) {
        prototypes.row(k) = p;
        break;
      }
    }
  }

  auto sample_images = [&](std::size_t n, std::uint64_t stream, std::vector<std::uint32_t>& labels) {
    Xoshiro256 rng(derive_seed(spec.seed, stream));
    Matrix teacher(static_cast<Eigen::Index>(n), spec.d);
    labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::uint32_t>(rng.bounded(spec.classes - 1));
      labels[i] = k;
      const Eigen::VectorXd noise = normal_matrix(r, 1, rng).col(0) * spec.noise_sigma;
      teacher.row(static_cast<Eigen::Index>(i)) = prototypes.row(k) + (u_basis * noise).transpose();
    }
    return teacher;
  };

  World world;
  world.ground_truth = a;
  world.prototypes = prototypes;
  world.gap_direction = gap;

  std::vector<std::string> class_names;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02zu", k);
    class_names.emplace_back(name);
  }

  auto make_set = [](Modality modality, const char* encoder, const Matrix& values) {
    EmbeddingSet set;
    set.modality = modality;
    set.encoder_name = encoder;
    set.vectors = to_float(values);
    return set;
  };

  std::vector<std::uint32_t> train_labels;
  const Matrix teacher_train = sample_images(spec.n_train, kTrainStream, train_labels);
  world.teacher_train = make_set(Modality::Image, "synth-teacher", teacher_train);
  world.student_train = make_set(Modality::Image, "synth-student", teacher_train * a_pinv.transpose());

  std::vector<std::uint32_t> eval_labels;
  const Matrix teacher_eval = sample_images(spec.n_eval, kEvalStream, eval_labels);
  world.teacher_eval = make_set(Modality::Image, "synth-teacher", teacher_eval);
  world.student_eval = make_set(Modality::Image, "synth-student", teacher_eval * a_pinv.transpose());
  for (EmbeddingSet* set : {&world.teacher_eval, &world.student_eval}) {
    set->labels = eval_labels;
    set->class_names = class_names;
  }

  Xoshiro256 prompt_rng(derive_seed(spec.seed, kPromptStream));
  Matrix prompts(static_cast<Eigen::Index>(spec.n_prompts), spec.d);
  for (Eigen::Index i = 0; i < prompts.rows(); ++i) {
    Eigen::VectorXd z = normal_matrix(r, 1, prompt_rng).col(0);
    if (z.norm() == 0.0) z(0) = 1.0;
    prompts.row(i) = (u_basis * z.normalized()).transpose() + spec.gap_offset * gap;
  }
  world.teacher_prompts = make_set(Modality::Text, "synth-teacher-text", prompts);

  world.templates.class_names = class_names;
  Xoshiro256 template_rng(derive_seed(spec.seed, kTemplateStream));
  constexpr std::size_t pool = sizeof(kTemplatePool) / sizeof(kTemplatePool[0]);
  for (std::size_t t = 0; t < spec.n_templates; ++t) {
    std::string tmpl = kTemplatePool[t % pool];
    if (t >= pool) tmpl = "(" + std::to_string(t / pool) + ") " + tmpl;
    world.templates.templates.push_back(tmpl);
    Matrix emb = prototypes.rowwise() + spec.gap_offset * gap;
    emb += spec.noise_sigma * normal_matrix(c, spec.d, template_rng);
    EmbeddingSet set = make_set(Modality::Text, "synth-teacher-text", emb);
    set.labels.emplace(spec.classes);
    for (std::size_t k = 0; k < spec.classes; ++k) (*set.labels)[k] = static_cast<std::uint32_t>(k);
    set.class_names = class_names;
    world.class_prompts.teacher_text_by_template.push_back(std::move(set));
  }
  world.class_prompts.class_names = class_names;
  world.class_prompts.templates = world.templates.templates;
  return world;
}

std::vector<std::uint8_t> encode_ground_truth(const Matrix& a) {
  binio::ByteWriter w;
  w.bytes(kGroundTruthMagic);
  w.u32(kGroundTruthVersion);
  w.u32(static_cast<std::uint32_t>(a.rows()));
  w.u32(static_cast<std::uint32_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) w.f64(a(i, j));
  return std::move(w).take();
}

Matrix decode_ground_truth(std::span<const std::uint8_t> bytes) {
  binio::ByteReader r(bytes);
  r.expect_magic(kGroundTruthMagic);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kGroundTruthVersion)
    throw ParseError(ParseFault::BadVersion, version_at, "version " + std::to_string(v));
  const std::size_t dims_at = r.offset();
  const auto d = static_cast<Eigen::Index>(r.u32());
  const auto m = static_cast<Eigen::Index>(r.u32());
  if (d == 0 || m == 0) throw ParseError(ParseFault::BadField, dims_at, "zero dimension");
  r.require(static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(m), 8, "ground truth");
  Matrix a(d, m);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::size_t at = r.offset();
      a(i, j) = r.f64();
      if (!std::isfinite(a(i, j))) throw ParseError(ParseFault::NonFinite, at, "ground truth");
    }
  r.expect_end();
  return a;
}

std::vector<std::filesystem::path> write_world(const World& world, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const EmbeddingSet& set, const char* name) {
    written.push_back(dir / name);
    write_embedding_file(set, written.back());
  };
  put(world.student_train, "student_train.zseb");
  put(world.teacher_train, "teacher_train.zseb");
  put(world.teacher_prompts, "prompts.zseb");
  put(world.student_eval, "student_eval.zseb");
  put(world.teacher_eval, "teacher_eval.zseb");

  written.push_back(dir / "class_templates.txt");
  const std::string text = format_class_templates(world.templates);
  binio::write_file(written.back(), std::span<const std::uint8_t>(
                                        reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  for (std::size_t k = 0; k < world.class_prompts.teacher_text_by_template.size(); ++k) {
    written.push_back(template_embedding_path(dir, k));
    write_embedding_file(world.class_prompts.teacher_text_by_template[k], written.back());
  }
  written.push_back(dir / "ground_truth.zsgt");
  binio::write_file(written.back(), encode_ground_truth(world.ground_truth));
  return written;
}

}  // namespace zoomshot
