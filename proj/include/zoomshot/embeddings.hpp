#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zoomshot/types.hpp"

namespace zoomshot {

enum class Modality : std::uint8_t { Image = 0, Text = 1 };

const char* to_string(Modality m);

/// A modality-tagged stack of feature vectors, one per row. Labels exist only
/// on evaluation sets; training never reads them.
struct EmbeddingSet {
  Modality modality = Modality::Image;
  std::string encoder_name;
  FloatMatrix vectors;
  std::optional<std::vector<std::uint32_t>> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
  bool has_labels() const { return labels.has_value(); }
  Matrix to_double() const { return vectors.cast<double>(); }
};

/// Throws ValidationError when a type invariant does not hold.
void validate(const EmbeddingSet& set);

// Binary interchange ("ZSEB", version 1, little-endian):
//   "ZSEB" | u32 version | u8 modality | u32 L | L bytes name | u64 n | u32 dim
//   | n*dim f32 row-major | u8 has_labels
//   | if has_labels: n u32 labels | u32 C | C x (u32 len | UTF-8 name)
inline constexpr char kEmbeddingMagic[] = "ZSEB";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

std::vector<std::uint8_t> encode_embedding(const EmbeddingSet& set);
/// Throws ParseError (with byte offset) on any malformed input.
EmbeddingSet decode_embedding(std::span<const std::uint8_t> bytes);

EmbeddingSet read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path);

/// Rows `indices` of `set`, in the given order, labels carried along.
EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> indices);

/// One epoch's visiting order: a Fisher-Yates permutation (xoshiro256**)
/// cut into consecutive batches. The last batch may be short.
struct BatchPlan {
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  std::vector<std::size_t> order;

  std::size_t batch_count() const { return (order.size() + batch_size - 1) / batch_size; }
  std::span<const std::size_t> batch(std::size_t k) const;
};

BatchPlan make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);

/// ceil(fraction * n) distinct indices chosen by seed, returned ascending.
/// fraction == 1 returns 0..n-1.
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);
EmbeddingSet subsample(const EmbeddingSet& set, double fraction, std::uint64_t seed);

/// UTF-8 text file, one prompt per line; blank lines are skipped.
std::vector<std::string> read_prompt_strings(const std::filesystem::path& path);

}  // namespace zoomshot
