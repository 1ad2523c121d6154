#pragma once

// Counter-based deterministic random streams keyed by (seed, instance id,
// purpose). Streams are pure functions of their key: no global state, so
// per-instance work can run in any order and still reproduce bit-identically.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace echodistill {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::int64_t global_seed, std::string_view instance_id,
            std::string_view purpose)
      : key_(make_key(global_seed, instance_id, purpose)), counter_(0) {}

  static std::uint64_t make_key(std::int64_t global_seed,
                                std::string_view instance_id,
                                std::string_view purpose) {
    std::uint64_t h = detail::splitmix64(static_cast<std::uint64_t>(global_seed));
    h = detail::splitmix64(h ^ detail::fnv1a(instance_id));
    h = detail::splitmix64(h ^ detail::fnv1a(purpose, 0x84222325cbf29ce4ull));
    return h;
  }

  std::uint64_t next_u64() { return detail::splitmix64(key_ + 0x632be59bd9b4e019ull * ++counter_); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // n is tiny in this codebase; modulo bias is negligible at 64 bits
    return next_u64() % n;
  }

  // standard normal via Box-Muller (one draw per call, cached pair)
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline RngStream rng_stream(std::int64_t global_seed, std::string_view instance_id,
                            std::string_view purpose) {
  return RngStream(global_seed, instance_id, purpose);
}

}  // namespace echodistill
