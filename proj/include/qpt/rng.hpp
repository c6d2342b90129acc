#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "qpt/types.hpp"

namespace qpt {

namespace detail {

// splitmix64; used to derive independent sub-stream seeds from a master seed
// plus structural tags (experiment, grid point, trial).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic random source. All distributions are implemented on top of
/// the raw engine output so that sequences are reproducible across compilers
/// and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t derive_seed(std::uint64_t master,
                                   std::initializer_list<std::uint64_t> tags) {
    std::uint64_t state = master;
    std::uint64_t seed = detail::splitmix64(state);
    for (std::uint64_t t : tags) {
      state ^= t + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
      seed = detail::splitmix64(state);
    }
    return seed;
  }

  static Rng substream(std::uint64_t master,
                       std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(master, tags));
  }

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(bound)) %
           bound;
  }

  /// Standard normal via Box-Muller.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Complex standard normal (independent N(0,1) real and imaginary parts).
  Complex cgaussian() {
    const double re = gaussian();
    const double im = gaussian();
    return Complex(re, im);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace qpt
