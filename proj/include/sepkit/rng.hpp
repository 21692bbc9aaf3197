#ifndef SEPKIT_RNG_HPP
#define SEPKIT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace sepkit {

// mt19937_64 with fixed mappings to doubles. std::uniform_real_distribution
// is implementation-defined, so the transforms are spelled out here to keep
// outputs bit-identical across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi] inclusive
  long uniform_int(long lo, long hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(engine_() % span);
  }

  // Box-Muller, pairs cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// splitmix64 finalizer; mixes (master seed, stream index) into an
// independent substream seed so parallel and serial runs agree.
inline uint64_t substream_seed(uint64_t master_seed, uint64_t index) {
  uint64_t z = master_seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace sepkit

#endif
