// SPDX-License-Identifier: Apache-2.0
#pragma once

// Platform-independent random streams. The standard distributions are
// implementation-defined, so everything here is built on raw mt19937_64
// output only.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kafa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, used to fold string ids into seeds.
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t p : parts) s = splitmix64(s ^ splitmix64(p));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform real in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Lazily materialized Fisher-Yates permutation of [0, n). Successive draws
/// yield a uniform sample without replacement in O(1) memory per draw, and
/// the first k draws are always a prefix of the first k' > k draws.
class SparsePermutation {
 public:
  explicit SparsePermutation(std::size_t n) : n_(n) {}

  bool exhausted() const { return drawn_ == n_; }
  std::size_t drawn() const { return drawn_; }

  std::size_t draw(Rng& rng) {
    const std::size_t j = drawn_ + rng.index(n_ - drawn_);
    const std::size_t vj = at(j);
    swapped_[j] = at(drawn_);
    ++drawn_;
    return vj;
  }

 private:
  std::size_t at(std::size_t i) const {
    auto it = swapped_.find(i);
    return it == swapped_.end() ? i : it->second;
  }

  std::size_t n_;
  std::size_t drawn_ = 0;
  std::unordered_map<std::size_t, std::size_t> swapped_;
};

/// k distinct indices from [0, n) that are not rejected by `skip`, in draw order.
template <class Skip>
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k, Skip&& skip) {
  std::vector<std::size_t> out;
  out.reserve(k);
  SparsePermutation perm(n);
  while (out.size() < k && !perm.exhausted()) {
    const std::size_t i = perm.draw(rng);
    if (!skip(i)) out.push_back(i);
  }
  return out;
}

}  // namespace kafa
