#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "zoomshot/embeddings.hpp"
#include "zoomshot/zeroshot.hpp"

namespace zoomshot {

/// Knobs of a synthetic teacher/student world with a planted linear map.
struct WorldSpec {
  Eigen::Index m = 12;  // student dim
  Eigen::Index d = 16;  // teacher dim
  std::size_t n_train = 2000;
  std::size_t n_eval = 1000;
  std::size_t classes = 10;
  double noise_sigma = 0.01;
  /// Length of the constant offset separating text from image embeddings.
  double gap_offset = 0.5;
  /// Ratio of largest to smallest singular value of the planted map.
  double condition_bound = 4.0;
  std::size_t n_prompts = 50;
  std::size_t n_templates = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Teacher image features live in range(A), an r = min(m, d) dimensional
/// subspace. Students see A^+ t, so h = A maps them back exactly. Text
/// embeddings sit gap_offset along a unit direction u orthogonal to range(A)
/// when d > m.
struct World {
  EmbeddingSet student_train;
  EmbeddingSet teacher_train;
  EmbeddingSet teacher_prompts;
  EmbeddingSet student_eval;  // labeled
  EmbeddingSet teacher_eval;  // labeled
  ClassTemplates templates;
  ClassPromptSet class_prompts;
  Matrix ground_truth;  // A, d x m
  Matrix prototypes;    // c x d, unit rows
  Vector gap_direction; // u, unit
};

/// Throws ConfigError on an invalid or infeasible spec.
World generate_world(const WorldSpec& spec);

/// Writes every world file into `dir` and returns their paths:
/// student_train.zseb, teacher_train.zseb, prompts.zseb, student_eval.zseb,
/// teacher_eval.zseb, class_templates.txt, template_NNN.zseb, ground_truth.zsgt.
std::vector<std::filesystem::path> write_world(const World& world, const std::filesystem::path& dir);

// Ground-truth sidecar ("ZSGT", version 1): u32 d | u32 m | d*m f64 row-major.
inline constexpr char kGroundTruthMagic[] = "ZSGT";
inline constexpr std::uint32_t kGroundTruthVersion = 1;

std::vector<std::uint8_t> encode_ground_truth(const Matrix& a);
Matrix decode_ground_truth(std::span<const std::uint8_t> bytes);

}  // namespace zoomshot
