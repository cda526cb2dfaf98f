#include <cmath>
#include <fstream>

#include <Eigen/QR>
#include <gtest/gtest.h>

#include "test_support.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/synthworld.hpp"
#include "zoomshot/zeroshot.hpp"

using namespace zoomshot;
using zstest::random_matrix;

namespace {

EmbeddingSet text_set(const Matrix& m) {
  EmbeddingSet s;
  s.modality = Modality::Text;
  s.vectors = m.cast<float>();
  return s;
}

EmbeddingSet labeled_images(const Matrix& m, std::vector<std::uint32_t> labels, std::size_t classes) {
  EmbeddingSet s;
  s.vectors = m.cast<float>();
  s.labels = std::move(labels);
  for (std::size_t k = 0; k < classes; ++k) s.class_names.push_back("c" + std::to_string(k));
  return s;
}

ClassPromptSet prompt_set(std::vector<Matrix> per_template) {
  ClassPromptSet cp;
  for (Eigen::Index k = 0; k < per_template.front().rows(); ++k) cp.class_names.push_back("c" + std::to_string(k));
  for (std::size_t t = 0; t < per_template.size(); ++t) {
    cp.templates.push_back("t" + std::to_string(t) + " {}");
    cp.teacher_text_by_template.push_back(text_set(per_template[t]));
  }
  return cp;
}

Matrix random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, seed));
  return Eigen::MatrixXd(qr.householderQ());
}

}  // namespace

TEST(ClassTemplates, ParseAndRender) {
  const ClassTemplates ct = parse_class_templates("2\ncat\nhot dog\na photo of a {}.\r\n\nan image of a {}\n");
  EXPECT_EQ(ct.class_names, (std::vector<std::string>{"cat", "hot dog"}));
  ASSERT_EQ(ct.templates.size(), 2u);
  EXPECT_EQ(ct.render(0, 1), "a photo of a hot dog.");
  EXPECT_EQ(parse_class_templates(format_class_templates(ct)).templates, ct.templates);
}

TEST(ClassTemplates, Errors) {
  EXPECT_THROW(parse_class_templates(""), ValidationError);
  EXPECT_THROW(parse_class_templates("x\na\n{}\n"), ValidationError);
  EXPECT_THROW(parse_class_templates("2\na\na\n{}\n"), ValidationError);
  EXPECT_THROW(parse_class_templates("2\na\nb\n"), ValidationError);
  EXPECT_THROW(parse_class_templates("1\na\nno placeholder\n"), ValidationError);
  EXPECT_THROW(parse_class_templates("1\na\n{} and {}\n"), ValidationError);
  EXPECT_THROW(parse_class_templates("3\na\nb\n"), ValidationError);
}

TEST(ClassEmbeddings, SingleTemplateIsNormalized) {
  const Matrix e = random_matrix(3, 4, 1, 5.0);
  const Matrix out = class_embeddings(prompt_set({e}));
  EXPECT_LT((out - Matrix(e.cast<float>().cast<double>().rowwise().normalized())).norm(), 1e-12);
}

TEST(ClassEmbeddings, DuplicateTemplatesIdempotent) {
  const Matrix e = random_matrix(3, 4, 2);
  EXPECT_LT((class_embeddings(prompt_set({e, e})) - class_embeddings(prompt_set({e}))).norm(), 1e-12);
}

TEST(ClassEmbeddings, AntipodalTemplatesDegenerate) {
  const Matrix e = random_matrix(3, 4, 3);
  EXPECT_THROW(class_embeddings(prompt_set({e, -e})), DegenerateError);
}

TEST(ClassEmbeddings, AveragesNormalizedTemplates) {
  Matrix a(1, 2), b(1, 2);
  a << 10, 0;
  b << 0, 1;
  const Matrix out = class_embeddings(prompt_set({a, b}));
  EXPECT_NEAR(out(0, 0), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(out(0, 1), std::sqrt(0.5), 1e-15);
  const Matrix raw = class_embeddings(prompt_set({a, b}), false);
  EXPECT_NEAR(raw(0, 0), 0.5, 1e-15);
}

TEST(ClassPromptSet, LoadsDirectoryOrFileList) {
  zstest::TempDir dir;
  std::ofstream(dir / "classes.txt") << "2\nx\ny\nA {}\nB {}\n";
  write_embedding_file(text_set(random_matrix(2, 3, 4)), template_embedding_path(dir.path(), 0));
  write_embedding_file(text_set(random_matrix(2, 3, 5)), template_embedding_path(dir.path(), 1));
  const ClassPromptSet from_dir = load_class_prompt_set(dir / "classes.txt", {dir.path()});
  const ClassPromptSet from_files = load_class_prompt_set(
      dir / "classes.txt", {template_embedding_path(dir.path(), 0), template_embedding_path(dir.path(), 1)});
  EXPECT_EQ(class_embeddings(from_dir), class_embeddings(from_files));
  EXPECT_THROW(load_class_prompt_set(dir / "classes.txt", {template_embedding_path(dir.path(), 0)}),
               ValidationError);
}

TEST(Classify, TiesGoToLowestIndex) {
  Matrix f(1, 2), c(3, 2);
  f << 1, 0;
  c << 0, 1, 1, 1, 1, -1;
  EXPECT_EQ(classify(f, c, {0}).predictions[0], 1u);
  Matrix same(2, 2);
  same << 1, 1, 2, 2;
  EXPECT_EQ(classify(f, same, {1}).predictions[0], 0u);
}

TEST(Classify, SelfRetrievalIsPerfect) {
  const Matrix exemplars = random_matrix(8, 6, 6);
  std::vector<std::uint32_t> labels(8);
  for (std::uint32_t i = 0; i < 8; ++i) labels[i] = i;
  EXPECT_EQ(classify(exemplars, exemplars, labels).top1_accuracy, 1.0);

  LinearMapPair maps;
  maps.w_fwd = random_matrix(9, 6, 7);
  maps.w_inv = random_matrix(6, 9, 8);
  const Matrix mapped = maps.forward(exemplars);
  EXPECT_EQ(eval_forward(maps, ModelScales{}, labeled_images(exemplars, labels, 8), mapped).top1_accuracy, 1.0);
}

TEST(Classify, ChanceLevelOnRandomFeatures) {
  const std::size_t n = 10000, c = 10;
  const Matrix protos = random_orthogonal(16, 9).topRows(c);
  const Matrix feats = random_matrix(static_cast<Eigen::Index>(n), 16, 10);
  std::vector<std::uint32_t> labels(n);
  std::mt19937_64 gen(11);
  for (auto& l : labels) l = static_cast<std::uint32_t>(gen() % c);
  const double p = 1.0 / static_cast<double>(c);
  const double three_sigma = 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(n));

  LinearMapPair maps;
  maps.w_fwd = Matrix::Identity(16, 16);
  maps.w_inv = random_orthogonal(16, 12);
  const EmbeddingSet set = labeled_images(feats, labels, c);
  EXPECT_NEAR(eval_forward(maps, ModelScales{}, set, protos).top1_accuracy, p, three_sigma);
  EXPECT_NEAR(eval_inverse(maps, ModelScales{}, set, protos).top1_accuracy, p, three_sigma);
}

TEST(Classify, ConfusionTraceAndThreadsAgree) {
  const Matrix feats = random_matrix(500, 5, 13), classes = random_matrix(4, 5, 14);
  std::vector<std::uint32_t> labels(500);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i % 4);
  const EvalResult one = classify(feats, classes, labels, {1});
  const EvalResult many = classify(feats, classes, labels, {7});
  const EvalResult all = classify(feats, classes, labels, {0});
  EXPECT_EQ(one.predictions, many.predictions);
  EXPECT_EQ(one.predictions, all.predictions);
  std::uint64_t trace = 0;
  for (std::size_t k = 0; k < 4; ++k) trace += one.confusion[k][k];
  EXPECT_EQ(one.top1_accuracy, static_cast<double>(trace) / 500.0);
  EXPECT_EQ(one.n_evaluated, 500u);
}

TEST(Classify, PredictionsInvariantToUniformRescaling) {
  const Matrix feats = random_matrix(300, 6, 15), classes = random_matrix(5, 6, 16);
  std::vector<std::uint32_t> labels(300, 0);
  const auto base = classify(feats, classes, labels).predictions;
  for (double s : {1e-3, 0.7, 42.0}) EXPECT_EQ(classify(s * feats, classes, labels).predictions, base);
}

TEST(Classify, Errors) {
  EXPECT_THROW(classify(random_matrix(2, 3, 17), random_matrix(2, 4, 18), {0, 1}), ShapeError);
  EXPECT_THROW(classify(random_matrix(2, 3, 17), random_matrix(2, 3, 18), {0, 2}), ValidationError);
  EXPECT_THROW(classify(Matrix::Zero(1, 3), random_matrix(2, 3, 18), {0}), DegenerateError);
}

TEST(Eval, ForwardAndInverseAgreeOnOrthogonalPair) {
  const Matrix q = random_orthogonal(8, 19);
  LinearMapPair maps;
  maps.w_fwd = q;
  maps.w_inv = q.transpose();
  const Matrix feats = random_matrix(400, 8, 20), classes = random_matrix(6, 8, 21);
  std::vector<std::uint32_t> labels(400);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i % 6);
  const EmbeddingSet set = labeled_images(feats, labels, 6);
  EXPECT_EQ(eval_forward(maps, ModelScales{}, set, classes).predictions,
            eval_inverse(maps, ModelScales{}, set, classes).predictions);
  const LinearMapPair id = LinearMapPair::identity(8);
  EXPECT_EQ(eval_forward(id, ModelScales{}, set, classes).predictions,
            eval_inverse(id, ModelScales{}, set, classes).predictions);
}

TEST(Eval, PlantedWorldWithExactMaps) {
  WorldSpec spec;
  spec.seed = 22;
  const World w = generate_world(spec);
  const Matrix class_emb = class_embeddings(w.class_prompts);
  // Exact maps: h = A and h_inv = A^+.
  LinearMapPair maps;
  maps.w_fwd = w.ground_truth;
  maps.w_inv = w.ground_truth.completeOrthogonalDecomposition().pseudoInverse();
  EXPECT_GE(eval_forward(maps, ModelScales{}, w.student_eval, class_emb).top1_accuracy, 0.95);
  EXPECT_GE(eval_inverse(maps, ModelScales{}, w.student_eval, class_emb).top1_accuracy, 0.95);
}

TEST(Eval, MissingLabelsAndDimensionMismatch) {
  LinearMapPair maps = LinearMapPair::identity(4);
  EmbeddingSet unlabeled;
  unlabeled.vectors = random_matrix(3, 4, 23).cast<float>();
  EXPECT_THROW(eval_forward(maps, ModelScales{}, unlabeled, random_matrix(2, 4, 24)), UsageError);
  const EmbeddingSet wrong = labeled_images(random_matrix(3, 5, 25), {0, 1, 0}, 2);
  EXPECT_THROW(eval_forward(maps, ModelScales{}, wrong, random_matrix(2, 4, 26)), ShapeError);
  EXPECT_THROW(eval_inverse(maps, ModelScales{}, labeled_images(random_matrix(3, 4, 27), {0, 1, 0}, 2),
                            random_matrix(2, 5, 28)),
               ShapeError);
}

TEST(EvalResult, CsvRows) {
  Matrix f(3, 2), c(2, 2);
  f << 1, 0, 0, 1, 1, 0.1;
  c << 1, 0, 0, 1;
  const EvalResult r = classify(f, c, {0, 0, 1});
  EXPECT_EQ(r.to_csv({"a,b", "z"}), "class,correct,total\n\"a,b\",1,2\nz,0,1\n");
  EXPECT_NEAR(r.top1_accuracy, 1.0 / 3.0, 1e-15);
}
