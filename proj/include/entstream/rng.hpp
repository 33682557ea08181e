#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace entstream {

/// Deterministic seedable generator. Every stochastic operation in the library
/// (parameter init, Gumbel noise, scene generation, shuffling, dropout) takes
/// one of these explicitly; there is no global RNG state.
///
/// Distribution helpers are hand-rolled on top of the engine's raw output so a
/// given seed produces the same stream on every platform (std:: distributions
/// are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(raw() >> 11) * kInv53; }

  /// Uniform in the open interval (0, 1); safe to pass through log().
  double uniform_open() {
    return (static_cast<double>(raw() >> 11) + 0.5) * kInv53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Fixed-point multiply keeps bias negligible.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(raw()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  /// Standard Gumbel(0, 1) sample: -log(-log(u)).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  /// Derives an independent seed for a named sub-stream of a base seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  std::mt19937_64 engine_;
};

}  // namespace entstream
