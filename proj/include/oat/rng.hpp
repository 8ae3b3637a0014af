#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace oat {

// Stateless mixer used to derive independent child seeds. Children derived
// from the same (seed, stream, index) triple are identical across runs and
// independent of the order in which they are requested, which is what makes
// parallel dataset builds order-invariant.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0xd1342543de82ef95ULL + 1) ^
                    splitmix64(index * 0x2545f4914f6cdd1dULL + 2));
}

// Seeded generator with fixed value mappings. The distributions are spelled
// out here (instead of <random> adaptors) so that sequences are reproducible
// bit-for-bit independent of the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // standard normal via Box-Muller; consumes exactly two engine draws
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace oat
