#pragma once

#include <cstdint>
#include <random>

namespace vmm {

/// Deterministic random stream. Every sampling operation takes one of these
/// by reference; there is no global random state.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform on [0,1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (cosine branch only).
  double gauss();

  /// Uniform integer in [0, n), rejection sampled so there is no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Independent stream derived from this one; used to give worker runs
  /// their own reproducible sequences.
  Rng fork(std::uint64_t tag) { return Rng(eng_() ^ (tag * 0x9e3779b97f4a7c15ULL)); }

private:
  std::mt19937_64 eng_;
};

} // namespace vmm
