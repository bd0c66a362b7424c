#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace ope {

// splitmix64 finalizer.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based stream derivation: fold purpose tags and indices into a master
// seed so replication i's stream never depends on how many replications run or
// on which worker picks it up.
inline uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path) {
  uint64_t s = mix64(master ^ 0xd1b54a32d192ed03ull);
  for (uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ull));
  return s;
}

// Stream purposes used across the library (values are part of the seed
// contract: changing them changes every sampled dataset).
enum : uint64_t {
  kStreamTrajectory = 1,
  kStreamTransition = 2,
  kStreamCorruptQ = 3,
  kStreamCorruptW = 4,
  kStreamData = 5,
  kStreamPolicyTies = 6,
};

// splitmix64 generator with hand-rolled samplers; nothing here depends on
// libstdc++ distribution internals, so byte-identical output is portable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller, two fresh uniforms per draw (no cached spare: the stream
  // position after k draws is always 2k).
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Inverse-CDF draw from an unnormalized nonnegative weight vector.
  int categorical(std::span<const double> p) {
    double total = 0.0;
    for (double v : p) total += v;
    double u = uniform() * total;
    double acc = 0.0;
    int last_pos = -1;
    for (int i = 0; i < static_cast<int>(p.size()); ++i) {
      if (p[i] > 0.0) last_pos = i;
      acc += p[i];
      if (u < acc) return i;
    }
    return last_pos;  // rounding fell off the end
  }

 private:
  uint64_t state_;
};

}  // namespace ope
