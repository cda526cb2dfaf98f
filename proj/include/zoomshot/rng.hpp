#pragma once

#include <cstdint>
#include <vector>

#include "zoomshot/types.hpp"

namespace zoomshot {

/// xoshiro256** (Blackman & Vigna), state expanded from a 64-bit seed with
/// SplitMix64. Every draw in the project goes through this generator so that
/// shuffles and synthetic worlds are reproducible bit-for-bit on any platform.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform integer in [0, bound], unbiased (rejection sampling).
  std::uint64_t bounded(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, Xoshiro256& rng);

/// rows x cols matrix of standard normal draws, filled in row-major order.
Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Xoshiro256& rng);

}  // namespace zoomshot
