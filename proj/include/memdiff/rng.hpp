#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

namespace memdiff {

// SplitMix64 finalizer, used to turn arbitrary 64-bit keys into seeds.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Splittable random stream.
//
// Every consumer derives its own stream from a parent key and an integer id,
// e.g. RngStream(master).derive(kExperimentId).derive(trial). Derivation uses
// only the key, never the draw state, so trials are reproducible regardless
// of evaluation order or worker count. The engine is mt19937_64 (bit-exact
// across conforming standard libraries); uniform and normal variates are
// produced by explicit conversions rather than std:: distributions so that
// the byte streams are stable.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : key_(splitmix64(seed)), engine_(splitmix64(key_ ^ 0xA5A5A5A5A5A5A5A5ULL)) {}

  RngStream derive(uint64_t id) const {
    RngStream child(0);
    child.key_ = splitmix64(key_ + 0x9E3779B97F4A7C15ULL * (id + 1));
    child.engine_.seed(splitmix64(child.key_ ^ 0xA5A5A5A5A5A5A5A5ULL));
    return child;
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). Modulo bias is < 2^-50 for the n used here.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  Eigen::VectorXd normal_vector(int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

  uint64_t key() const { return key_; }

 private:
  uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace memdiff
