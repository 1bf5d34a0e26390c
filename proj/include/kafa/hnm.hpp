// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hard negative selection: sample N_cand negatives uniformly without
// replacement from the pool, score them against the image feature, keep the
// N_hard - 1 highest (ties by ascending id).

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/rng.hpp"

namespace kafa {

enum class HnmStrategy { none, full, memory_bank, momentum };

inline std::string_view hnm_name(HnmStrategy s) {
  switch (s) {
    case HnmStrategy::none: return "none";
    case HnmStrategy::full: return "full";
    case HnmStrategy::memory_bank: return "memory_bank";
    case HnmStrategy::momentum: return "momentum";
  }
  return "none";
}

inline HnmStrategy parse_hnm(std::string_view s) {
  if (s == "none") return HnmStrategy::none;
  if (s == "full") return HnmStrategy::full;
  if (s == "memory_bank" || s == "memory-bank") return HnmStrategy::memory_bank;
  if (s == "momentum") return HnmStrategy::momentum;
  throw Error(Errc::invalid_argument, "unknown hnm strategy '" + std::string(s) + "'");
}

/// Indices into a pool of `pool_size`, skipping `excluded(i)`.
template <class Excluded>
std::vector<std::size_t> sample_candidates(Rng& rng, std::size_t pool_size, std::size_t n_excluded, std::size_t n_cand,
                                           Excluded&& excluded) {
  if (pool_size < n_excluded || pool_size - n_excluded < n_cand)
    throw Error(Errc::insufficient_data, "negative pool of " + std::to_string(pool_size - std::min(pool_size, n_excluded)) +
                                             " is smaller than N_cand=" + std::to_string(n_cand));
  return sample_without_replacement(rng, pool_size, n_cand, excluded);
}

/// The k best candidates by `score(c)` descending, ties by `id(c)` ascending.
template <class Score, class Id>
std::vector<std::size_t> top_k_by_score(std::span<const std::size_t> candidates, std::size_t k, Score&& score, Id&& id) {
  struct Scored {
    double s;
    std::size_t c;
  };
  std::vector<Scored> all;
  all.reserve(candidates.size());
  for (auto c : candidates) all.push_back({score(c), c});
  k = std::min(k, all.size());
  auto better = [&](const Scored& a, const Scored& b) {
    if (a.s != b.s) return a.s > b.s;
    return id(a.c) < id(b.c);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].c);
  return out;
}

}  // namespace kafa
