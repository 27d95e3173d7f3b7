#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace proptrain {

// Counter-based PRNG.  Every output is a hash of (key, counter), so a stream
// derived for a (sample, restart, ...) tuple yields the same numbers no matter
// which thread draws from it or how work is scheduled.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(key) {}

  // Child stream addressed by an id path, e.g. stream(seed, {epoch, sample}).
  static Rng stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t k = mix(master ^ 0x9e3779b97f4a7c15ull);
    for (std::uint64_t id : path) k = mix(k ^ mix(id + 0xd1b54a32d192ed03ull));
    return Rng(k);
  }

  Rng derive(std::uint64_t id) const {
    return Rng(mix(key_ ^ mix(id + 0xd1b54a32d192ed03ull)));
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // standard normal via Box-Muller; two draws per call, no cached spare
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace proptrain
