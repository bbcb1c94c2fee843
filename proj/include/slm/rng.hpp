#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace slm {

/// Derives an independent stream seed from a root seed and a fixed label.
/// Streams are keyed by label so a new consumer never shifts existing ones.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// Seeded random source. Built on mt19937_64, whose output sequence is fixed
/// by the standard; the distributions below are implemented here (not via
/// std::*_distribution) so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view label)
      : engine_(derive_seed(root, label)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace slm
