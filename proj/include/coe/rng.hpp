#pragma once

#include <array>
#include <cstdint>

namespace coe {

/// splitmix64 finalizer; seeds xoshiro and derives per-component streams.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Stream seed for component `stream` under a run seed. Every consumer of
/// randomness (initialization, data order, noise, eval sets) draws from its
/// own derived stream so adding draws in one place never perturbs another.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// xoshiro256** with Box-Muller normals. The full state (including the
/// cached second normal) is exposed so checkpoints can resume a stream.
class Rng {
 public:
  struct State {
    std::array<std::uint64_t, 4> s{};
    bool has_spare = false;
    double spare = 0.0;
    friend bool operator==(const State&, const State&) = default;
  };

  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi] (inclusive), by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
  /// Standard normal via Box-Muller; the sine branch is cached for the next call.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  const State& state() const noexcept { return state_; }
  void set_state(const State& st) noexcept { state_ = st; }

 private:
  State state_;
};

}  // namespace coe
