#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zoomshot/embeddings.hpp"
#include "zoomshot/losses.hpp"
#include "zoomshot/trainer.hpp"

namespace zoomshot {

/// Class names plus prompt templates, as read from a class-template file:
/// first line the class count c, then c class names, then one template per
/// line, each containing exactly one "{}" placeholder.
struct ClassTemplates {
  std::vector<std::string> class_names;
  std::vector<std::string> templates;

  std::string render(std::size_t template_index, std::size_t class_index) const;
};

ClassTemplates parse_class_templates(const std::string& text);
ClassTemplates read_class_templates(const std::filesystem::path& path);
std::string format_class_templates(const ClassTemplates& ct);

/// Per-template teacher text embeddings of every class.
struct ClassPromptSet {
  std::vector<std::string> class_names;
  std::vector<std::string> templates;
  std::vector<EmbeddingSet> teacher_text_by_template;  // each c x d, class order

  std::size_t class_count() const { return class_names.size(); }
  void validate() const;
};

/// Embedding file for template k inside a class-embedding directory.
std::filesystem::path template_embedding_path(const std::filesystem::path& dir, std::size_t k);

/// Loads the per-template files. `sources` is either a single directory
/// holding template_NNN.zseb files or one file per template, in order.
ClassPromptSet load_class_prompt_set(const std::filesystem::path& template_file,
                                     const std::vector<std::filesystem::path>& sources);

/// Per class: normalize each template embedding, average over templates,
/// then renormalize the mean. A vanishing mean raises DegenerateError.
Matrix class_embeddings(const ClassPromptSet& cp, bool renormalize = true);

struct EvalResult {
  double top1_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  std::vector<std::uint32_t> predictions;
  std::size_t n_evaluated = 0;

  std::uint64_t correct(std::size_t c) const { return confusion[c][c]; }
  std::uint64_t total(std::size_t c) const;
  /// "class,correct,total" rows.
  std::string to_csv(const std::vector<std::string>& class_names) const;
};

struct EvalOptions {
  /// Worker threads for the per-row argmax; 0 means all cores.
  unsigned threads = 1;
};

/// argmax_j cos(features_i, classes_j), lowest index on ties, tallied against labels.
EvalResult classify(const Matrix& features, const Matrix& classes,
                    const std::vector<std::uint32_t>& labels, const EvalOptions& opts = {});

/// Student image features mapped into the teacher space by h, then classified
/// against the class text embeddings.
EvalResult eval_forward(const LinearMapPair& maps, const ModelScales& scales,
                        const EmbeddingSet& student_imgs, const Matrix& class_emb,
                        const EvalOptions& opts = {});

/// Class text embeddings mapped into the student space by h_inv; raw student
/// features are classified there.
EvalResult eval_inverse(const LinearMapPair& maps, const ModelScales& scales,
                        const EmbeddingSet& student_imgs, const Matrix& class_emb,
                        const EvalOptions& opts = {});

}  // namespace zoomshot
