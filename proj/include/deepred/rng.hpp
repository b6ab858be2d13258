#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace deepred {

// Deterministic splitmix64 generator. Every component derives its own stream
// from the root seed and a fixed text label, so adding a consumer never
// shifts the draws of another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  Rng(uint64_t root_seed, std::string_view label)
      : state_(mix(root_seed ^ fnv1a(label))) {}

  Rng(uint64_t root_seed, std::string_view label, uint64_t n)
      : state_(mix(mix(root_seed ^ fnv1a(label)) ^ (n + 0x9e3779b97f4a7c15ull))) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix_output(state_);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), n > 0. Unbiased (multiply-shift with rejection).
  uint64_t next_below(uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<uint64_t>(m);
    if (low < n) {
      uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller.
  double next_normal() {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Exponential with unit mean.
  double next_exponential() { return -std::log(1.0 - next_double()); }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    return mix_output(x);
  }

 private:
  static uint64_t mix_output(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

// Fisher-Yates shuffle driven by an Rng stream.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace deepred
