#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace sentinel {

// xoshiro256** 1.0 (Blackman & Vigna), seeded by expanding a 64-bit seed with
// splitmix64 (increment 0x9E3779B97F4A7C15). All derived draws below are
// implemented here rather than with <random> distributions, whose output is
// implementation-defined, so that a seed reproduces byte-identical data on
// every platform.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(const State& s);
  const State& state() const { return s_; }

  std::uint64_t next_u64();

  // Uniform integer in [0, n). n must be > 0. Lemire's nearly-divisionless
  // method with rejection, so the result is exactly uniform.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Poisson draw. Knuth's product method on chunks of mean <= 30, summed;
  // exact for any mean >= 0.
  std::uint64_t poisson(double mean);

  // Exponential with the given mean, by inversion.
  double exponential(double mean);

  // Index drawn proportionally to non-negative weights (at least one > 0).
  std::size_t categorical(std::span<const double> weights);

  // Independent child stream; does not disturb reproducibility of siblings
  // created in the same order.
  Rng fork();

 private:
  State s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace sentinel
