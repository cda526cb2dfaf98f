#include "zoomshot/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "zoomshot/binary_io.hpp"
#include "zoomshot/errors.hpp"
#include "zoomshot/rng.hpp"

namespace zoomshot {

const char* to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

void validate(const EmbeddingSet& set) {
  if (set.vectors.rows() < 1) throw ValidationError("embedding set has no vectors");
  if (set.vectors.cols() < 1) throw ValidationError("embedding set has zero dimension");
  if (!set.vectors.allFinite()) throw ValidationError("embedding set contains NaN or Inf");
  if (set.modality != Modality::Image && set.modality != Modality::Text)
    throw ValidationError("unknown modality");
  if (!binio::is_valid_utf8(set.encoder_name)) throw ValidationError("encoder name is not UTF-8");
  if (set.labels) {
    if (set.labels->size() != set.size())
      throw ValidationError("label count " + std::to_string(set.labels->size()) +
                            " != vector count " + std::to_string(set.size()));
    for (std::size_t i = 0; i < set.labels->size(); ++i)
      if ((*set.labels)[i] >= set.class_names.size())
        throw ValidationError("label " + std::to_string((*set.labels)[i]) + " at row " +
                              std::to_string(i) + " has no class name (" +
                              std::to_string(set.class_names.size()) + " classes)");
  } else if (!set.class_names.empty()) {
    throw ValidationError("class names without labels cannot be stored");
  }
  for (const auto& name : set.class_names)
    if (!binio::is_valid_utf8(name)) throw ValidationError("class name is not UTF-8");
}

std::vector<std::uint8_t> encode_embedding(const EmbeddingSet& set) {
  validate(set);
  if (set.dim() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError("dimension exceeds u32");
  binio::ByteWriter w;
  w.bytes(kEmbeddingMagic);
  w.u32(kEmbeddingVersion);
  w.u8(static_cast<std::uint8_t>(set.modality));
  w.string(set.encoder_name);
  w.u64(set.size());
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (Eigen::Index i = 0; i < set.vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) w.f32(set.vectors(i, j));
  w.u8(set.labels ? 1 : 0);
  if (set.labels) {
    for (std::uint32_t label : *set.labels) w.u32(label);
    w.u32(static_cast<std::uint32_t>(set.class_names.size()));
    for (const auto& name : set.class_names) w.string(name);
  }
  return std::move(w).take();
}

EmbeddingSet decode_embedding(std::span<const std::uint8_t> bytes) {
  binio::ByteReader r(bytes);
  r.expect_magic(kEmbeddingMagic);
  const std::size_t version_at = r.offset();
  if (const auto version = r.u32(); version != kEmbeddingVersion)
    throw ParseError(ParseFault::BadVersion, version_at, "version " + std::to_string(version));

  EmbeddingSet set;
  const std::size_t modality_at = r.offset();
  const std::uint8_t modality = r.u8();
  if (modality > 1)
    throw ParseError(ParseFault::BadField, modality_at, "modality " + std::to_string(modality));
  set.modality = static_cast<Modality>(modality);
  const std::uint32_t name_len = r.u32();
  set.encoder_name = r.utf8(name_len, "encoder name");

  const std::size_t n_at = r.offset();
  const std::uint64_t n = r.u64();
  const std::uint32_t dim = r.u32();
  if (n == 0) throw ParseError(ParseFault::BadField, n_at, "n = 0");
  if (dim == 0) throw ParseError(ParseFault::BadField, n_at + 8, "dim = 0");
  if (n > std::numeric_limits<std::uint64_t>::max() / dim)
    throw ParseError(ParseFault::Truncated, r.offset(), "n*dim overflows");
  r.require(n * dim, 4, "vector payload");

  set.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < set.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) {
      const std::size_t at = r.offset();
      const float v = r.f32();
      if (!std::isfinite(v))
        throw ParseError(ParseFault::NonFinite, at,
                         "row " + std::to_string(i) + " col " + std::to_string(j));
      set.vectors(i, j) = v;
    }
  }

  const std::size_t flag_at = r.offset();
  const std::uint8_t has_labels = r.u8();
  if (has_labels > 1)
    throw ParseError(ParseFault::BadField, flag_at, "has_labels " + std::to_string(has_labels));
  if (has_labels == 1) {
    r.require(n, 4, "labels");
    std::vector<std::uint32_t> labels(n);
    std::vector<std::size_t> label_at(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      label_at[i] = r.offset();
      labels[i] = r.u32();
    }
    const std::uint32_t class_count = r.u32();
    // Each class name costs at least its 4-byte length prefix.
    r.require(class_count, 4, "class names");
    set.class_names.reserve(class_count);
    for (std::uint32_t c = 0; c < class_count; ++c) {
      const std::uint32_t len = r.u32();
      set.class_names.push_back(r.utf8(len, "class name"));
    }
    for (std::uint64_t i = 0; i < n; ++i)
      if (labels[i] >= class_count)
        throw ParseError(ParseFault::BadField, label_at[i],
                         "label " + std::to_string(labels[i]) + " >= class count " +
                             std::to_string(class_count));
    set.labels = std::move(labels);
  }
  r.expect_end();
  return set;
}

EmbeddingSet read_embedding_file(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  try {
    return decode_embedding(bytes);
  } catch (const ParseError& e) {
    throw ParseError(e.fault(), e.offset(), path.string());
  }
}

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path) {
  binio::write_file(path, encode_embedding(set));
}

EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> indices) {
  EmbeddingSet out;
  out.modality = set.modality;
  out.encoder_name = set.encoder_name;
  out.class_names = set.class_names;
  out.vectors.resize(static_cast<Eigen::Index>(indices.size()), set.vectors.cols());
  if (set.labels) out.labels.emplace(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= set.size()) throw UsageError("select_rows: index out of range");
    out.vectors.row(static_cast<Eigen::Index>(k)) = set.vectors.row(static_cast<Eigen::Index>(indices[k]));
    if (set.labels) (*out.labels)[k] = (*set.labels)[indices[k]];
  }
  return out;
}

std::span<const std::size_t> BatchPlan::batch(std::size_t k) const {
  if (k >= batch_count()) throw UsageError("batch index out of range");
  const std::size_t begin = k * batch_size;
  const std::size_t len = std::min(batch_size, order.size() - begin);
  return std::span<const std::size_t>(order).subspan(begin, len);
}

BatchPlan make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (n == 0) throw DegenerateError("cannot batch an empty dataset");
  Xoshiro256 rng(seed);
  return BatchPlan{seed, batch_size, shuffled_indices(n, rng)};
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("data fraction must lie in (0, 1], got " + std::to_string(fraction));
  if (n == 0) throw DegenerateError("cannot subsample an empty dataset");
  const double exact = fraction * static_cast<double>(n);
  // Absorb representation error so that 0.07 * 100 keeps 7 rows, not 8.
  auto keep = static_cast<std::size_t>(std::ceil(exact - 1e-9 * exact));
  keep = std::clamp<std::size_t>(keep, 1, n);
  std::vector<std::size_t> idx;
  if (keep == n) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  Xoshiro256 rng(seed);
  idx = shuffled_indices(n, rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

EmbeddingSet subsample(const EmbeddingSet& set, double fraction, std::uint64_t seed) {
  const auto idx = subsample_indices(set.size(), fraction, seed);
  return select_rows(set, idx);
}

std::vector<std::string> read_prompt_strings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file " + path.string());
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!binio::is_valid_utf8(line)) throw ValidationError("prompt file is not UTF-8: " + path.string());
    prompts.push_back(line);
  }
  return prompts;
}

}  // namespace zoomshot
