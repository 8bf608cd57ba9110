#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace polpre {

// Platform-stable random source. The standard distributions are
// implementation-defined, so every draw used for output goes through the
// helpers below instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform01();

  // Standard normal via Box-Muller.
  double normal();

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a over the bytes of `text`; stable across platforms.
std::uint64_t fnv1a64(std::string_view text);

// Child seed for a named consumer (a stage, an article id, an epoch).
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);

}  // namespace polpre
