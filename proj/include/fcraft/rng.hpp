#pragma once

#include <cstdint>
#include <random>

#include "fcraft/tensor.hpp"

namespace fcraft {

// Seeded RNG with hand-specified output transforms. std::mt19937_64 itself is
// pinned by the standard, but the std distributions are not, so uniform and
// normal are derived here to keep every stream bit-reproducible across
// compilers. normal() always consumes exactly two engine draws (plain
// Box-Muller, no cached spare), which makes call sequences easy to reason
// about in determinism tests.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    // Box-Muller; u1 nudged away from zero so the log is finite.
    const double u1 = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::size_t index(std::size_t n) {
    // Modulo bias is irrelevant at these ranges (n << 2^64).
    return static_cast<std::size_t>(eng_() % n);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * normal();
    return t;
  }

  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws, again for cross-platform
    // reproducibility.
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Stable derivation of per-stage seeds from one experiment seed, so adding a
// consumer in one stage cannot shift the stream of another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace fcraft
