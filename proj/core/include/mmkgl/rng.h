#pragma once

// Seeded random streams that produce the same bits on every platform.
// std::normal_distribution, std::uniform_real_distribution and std::shuffle
// are implementation-defined, so the transforms here are written out over
// the raw (fully specified) std::mt19937_64 output.

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace mmkgl {

/// Derives an independent seed for a named substream ("split", "init",
/// "synth", ...) of a master seed.
std::uint64_t substream_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmkgl
