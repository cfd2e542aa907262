#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bssard {

/// Seeded random source threaded explicitly through every sampling routine.
/// There is no global generator anywhere in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform real in [0, 1).
  double uniform();
  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

  /// Textual engine state; round-trips through set_state().
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// Deterministic 64-bit mixer used to derive independent child seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace bssard
