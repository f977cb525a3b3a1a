#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fmm {

/// Seeded random source. Wraps std::mt19937_64 but does its own conversions
/// so that draws do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  /// k distinct elements of `pool`, uniformly without replacement, in draw order.
  std::vector<int> sample(std::span<const int> pool, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

/// Deterministic seed derivation (splitmix64 over the pair).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace fmm
