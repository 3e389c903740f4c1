#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ccmed {

// splitmix64; used to mix seed material into stream keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic counter-based uniform stream.  Streams are keyed by an
// arbitrary list of tags so parallel callers can partition randomness
// without coordination.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(mix64(seed)) {}

  RngStream fork(std::uint64_t tag) const {
    RngStream s(0);
    s.state_ = mix64(state_ ^ mix64(tag));
    return s;
  }
  RngStream fork(std::string_view tag) const { return fork(hash_str(tag)); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on (0,1), excludes endpoints
  double next_uniform() {
    const double u = (next_u64() >> 11) * 0x1.0p-53;
    return u == 0.0 ? 0x1.0p-54 : u;
  }

  double next_normal();

  // integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Inverse standard normal CDF (Wichura's AS241, double precision).
double inv_normal_cdf(double p);

inline double RngStream::next_normal() { return inv_normal_cdf(next_uniform()); }

}  // namespace ccmed
