#pragma once

// Seeded random source with named sub-streams. Every piece of randomness in
// the library flows through one master seed; independent consumers derive
// their own stream by name so that adding draws to one consumer never
// perturbs another. Samplers are written out explicitly (rather than using
// std::*_distribution) so that a seed produces the same bytes on every
// platform.

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "hicl/common.hpp"

namespace hicl {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(detail::splitmix64(seed)) {}

  // Derived stream; independent of draws already taken from this one.
  Rng stream(std::string_view name) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a64(name)));
  }

  Rng stream(std::string_view name, std::uint64_t index) const {
    return Rng(detail::splitmix64(seed_ ^ detail::fnv1a64(name) ^ (0x51ed2701ULL + index * 0x9e3779b97f4a7c15ULL)));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, two uniforms per draw, no cached spare.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::size_t uniform_index(std::size_t n) {
    require_config(n > 0, "uniform_index: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  // k distinct indices from [0, n), order of selection preserved.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    require(k <= n, "sample_without_replacement: k exceeds population");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + uniform_index(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::uint64_t seed() const { return seed_; }

  // Textual state, round-trips exactly (mt19937_64 stream format is
  // specified by the standard).
  std::string save_state() const {
    std::ostringstream os;
    os << seed_ << ' ' << eng_;
    return os.str();
  }

  static Rng load_state(const std::string& s) {
    std::istringstream is(s);
    std::uint64_t seed = 0;
    is >> seed;
    Rng r(seed);
    is >> r.eng_;
    if (!is) throw DataError("Rng::load_state: malformed state string");
    return r;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace hicl
