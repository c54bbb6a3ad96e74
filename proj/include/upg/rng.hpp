#pragma once

#include <cmath>
#include <cstdint>

namespace upg {

// Seeded counter-based generator. Every random quantity in the project is
// drawn through these explicit transforms, so results are reproducible
// across platforms and independent of thread scheduling. Substreams are
// derived by hashing keys into the state, which lets parallel sections own
// non-overlapping streams keyed by entity index.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x853c49e6748fea9bULL)) {}

  // Independent stream derived from this generator's seed and the given keys.
  Rng stream(std::uint64_t k0, std::uint64_t k1 = 0, std::uint64_t k2 = 0) const {
    Rng r(0);
    r.state_ = mix(state_ ^ mix(k0 + 0x9e3779b97f4a7c15ULL));
    r.state_ = mix(r.state_ ^ mix(k1 + 0xbf58476d1ce4e5b9ULL));
    r.state_ = mix(r.state_ ^ mix(k2 + 0x94d049bb133111ebULL));
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform on [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n).
  int uniform_int(int n) {
    int v = int(uniform() * double(n));
    return v >= n ? n - 1 : v;
  }

  // Standard normal via Box-Muller; one value per call, no cached spare.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace upg
