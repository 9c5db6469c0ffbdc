#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dmmg {

/// Deterministic random source. All randomness in the library flows through
/// this wrapper so that runs are reproducible bit-for-bit across platforms:
/// mt19937_64 output is fixed by the standard and the value scalings below
/// avoid the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix(mix(seed))) {}
  /// Independent stream derived from (seed, stream, substream).
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0)
      : gen_(mix(mix(mix(seed) ^ stream) ^ substream)) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  /// Unbiased integer in [0, n). n must be positive.
  int uniform_int(int n) {
    const auto bound = static_cast<std::uint64_t>(n);
    return static_cast<int>(
        static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * bound) >> 64));
  }

  /// Standard normal via Box-Muller.
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    has_spare_ = true;
    return mean + stddev * static_cast<float>(r * std::cos(a));
  }

  void shuffle(std::vector<int>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace dmmg
