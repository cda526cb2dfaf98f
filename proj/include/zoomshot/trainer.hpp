#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zoomshot/embeddings.hpp"
#include "zoomshot/losses.hpp"
#include "zoomshot/variance.hpp"

namespace zoomshot {

enum class InitScheme {
  FanInUniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero
  Identity,      // needs m == d
};

const char* to_string(InitScheme s);
InitScheme parse_init_scheme(const std::string& s);

struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch_size = 256;
  double target_variance = 4.5;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double data_fraction = 1.0;
  LossConfig loss;
  bool affine = false;
  VarianceRatio variance_ratio = VarianceRatio::Corrected;
  InitScheme init = InitScheme::FanInUniform;

  void validate() const;
};

/// Canonical JSON rendering of every field; stored in the model file.
std::string config_digest(const TrainConfig& cfg);

struct VarianceScales {
  VarianceScale student;
  VarianceScale teacher_img;
  VarianceScale teacher_txt;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double mse = 0.0;
  double cc = 0.0;
  double pgkd = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::size_t n_effective = 0;
  std::size_t steps_per_epoch = 0;
  std::string param_checksum;  // SHA-256 over the final parameters

  /// One row per step. Wall time is left out unless asked for so that
  /// reports of identical runs are byte-identical.
  std::string to_csv(bool include_timing = false) const;
};

struct TrainResult {
  LinearMapPair maps;
  VarianceScales scales;
  TrainReport report;
};

/// lr0 * (1 + cos(pi * step / (total_steps - 1))) / 2, and lr0 when total_steps == 1.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every parameter in place. State is
/// sized on the first call; later calls must pass the same shapes.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
               AdamState& state, double lr, const AdamHyper& hyper = {});

/// Initial maps for the given scheme, drawn from the seeded generator.
LinearMapPair init_maps(Eigen::Index m, Eigen::Index d, InitScheme scheme, bool affine,
                        std::uint64_t seed);

/// Full training run. Image sets must list the same images in the same
/// order. `prompts` may be empty when neither CC nor PG-KD is active.
TrainResult train(const EmbeddingSet& student_imgs, const EmbeddingSet& teacher_imgs,
                  const PromptBank* prompts, const TrainConfig& cfg);

/// SHA-256 (hex) over the little-endian f64 bytes of all parameters.
std::string parameter_checksum(const LinearMapPair& maps);

// Model file ("ZSLM", version 1, little-endian):
//   "ZSLM" | u32 version | u32 m | u32 d | u8 affine | f64 scale_student
//   | f64 scale_teacher_img | f64 scale_teacher_txt | f64 target_variance
//   | W_fwd d*m f64 | [b_fwd d f64] | W_inv m*d f64 | [b_inv m f64]
//   | u32 len | UTF-8 config digest
inline constexpr char kModelMagic[] = "ZSLM";
inline constexpr std::uint32_t kModelVersion = 1;

struct ModelScales {
  double student = 1.0;
  double teacher_img = 1.0;
  double teacher_txt = 1.0;
  double target_variance = 4.5;
};

ModelScales to_model_scales(const VarianceScales& s);

struct Model {
  LinearMapPair maps;
  ModelScales scales;
  std::string config_digest;
};

std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);

void save_model(const LinearMapPair& maps, const VarianceScales& scales,
                const std::string& cfg_digest, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace zoomshot
