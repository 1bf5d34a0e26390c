// SPDX-License-Identifier: Apache-2.0
#pragma once

// Candidate-set construction and retrieval metrics.
//
// official:    3 ground-truth positives + 12 negatives per image
// k_candidate: 1 random ground-truth positive + K-1 negatives
// Negatives are sampled uniformly without replacement from the texts of
// other images in the same split. Ranks are 1-based; ties in score are
// broken by ascending text id.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/linalg.hpp"
#include "kafa/manifest.hpp"
#include "kafa/rng.hpp"

namespace kafa {

enum class ProtocolKind { official, k_candidate };

inline constexpr std::size_t kOfficialPositives = 3;
inline constexpr std::size_t kOfficialNegatives = 12;

inline std::string_view protocol_name(ProtocolKind k) { return k == ProtocolKind::official ? "official" : "k_candidate"; }

inline ProtocolKind parse_protocol(std::string_view s) {
  if (s == "official") return ProtocolKind::official;
  if (s == "k_candidate" || s == "k-candidate") return ProtocolKind::k_candidate;
  throw Error(Errc::invalid_argument, "unknown protocol '" + std::string(s) + "'");
}

struct EvalProtocol {
  ProtocolKind kind = ProtocolKind::k_candidate;
  std::size_t K = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == ProtocolKind::k_candidate && K < 2) throw Error(Errc::invalid_argument, "K must be at least 2");
  }
};

struct CandidateSet {
  std::string image_id;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;

  std::size_t size() const { return positives.size() + negatives.size(); }
};

struct Metrics {
  double accuracy = 0.0;  // percent
  double rank = 0.0;
  double mean_rank = 0.0;
  std::size_t n_images = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Ranks of every positive within one candidate set, ascending.
struct ImageRanks {
  std::string image_id;
  std::vector<std::size_t> positive_ranks;
};

inline std::vector<double> score(const Vec& image_feat, std::span<const Vec> text_feats) {
  std::vector<double> out;
  out.reserve(text_feats.size());
  for (const auto& t : text_feats) {
    if (t.size() != image_feat.size())
      throw Error(Errc::dimension_mismatch, "text dim " + std::to_string(t.size()) + " vs image dim " +
                                                std::to_string(image_feat.size()));
    out.push_back(dot(image_feat, t));
  }
  return out;
}

inline std::vector<CandidateSet> build_candidates(const EvalProtocol& protocol, std::span<const ImageRecord> images) {
  protocol.validate();
  // Distinct texts of the split, with their owning images.
  std::vector<std::string> pool;
  std::unordered_map<std::string, std::size_t> pool_index;
  std::vector<std::vector<std::size_t>> owned(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].texts.empty()) throw Error(Errc::insufficient_data, "image '" + images[i].image_id + "' has no texts");
    for (const auto& t : images[i].texts) {
      auto [it, fresh] = pool_index.emplace(t, pool.size());
      if (fresh) pool.push_back(t);
      owned[i].push_back(it->second);
    }
  }

  const bool official = protocol.kind == ProtocolKind::official;
  const std::size_t n_neg = official ? kOfficialNegatives : protocol.K - 1;

  std::vector<CandidateSet> sets;
  sets.reserve(images.size());
  std::unordered_set<std::size_t> own;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    Rng rng(derive_seed(protocol.seed, {hash_string(img.image_id)}));
    CandidateSet cs{img.image_id, {}, {}};

    std::vector<std::string> texts = img.texts;
    std::sort(texts.begin(), texts.end());
    texts.erase(std::unique(texts.begin(), texts.end()), texts.end());
    if (official) {
      if (texts.size() < kOfficialPositives)
        throw Error(Errc::insufficient_data, "image '" + img.image_id + "' has fewer than 3 ground-truth texts");
      auto picked = sample_without_replacement(rng, texts.size(), kOfficialPositives, [](std::size_t) { return false; });
      std::sort(picked.begin(), picked.end());
      for (auto k : picked) cs.positives.push_back(texts[k]);
    } else {
      cs.positives.push_back(texts[rng.index(texts.size())]);
    }

    own.clear();
    own.insert(owned[i].begin(), owned[i].end());
    if (pool.size() - own.size() < n_neg)
      throw Error(Errc::insufficient_data, "image '" + img.image_id + "': need " + std::to_string(n_neg) +
                                               " negatives, pool has " + std::to_string(pool.size() - own.size()));
    for (auto k : sample_without_replacement(rng, pool.size(), n_neg, [&](std::size_t j) { return own.count(j) != 0; }))
      cs.negatives.push_back(pool[k]);
    sets.push_back(std::move(cs));
  }
  return sets;
}

/// Ranks positives of one set given a score per candidate (positives first,
/// then negatives, in set order).
inline ImageRanks rank_candidates(const CandidateSet& cs, std::span<const double> scores) {
  const std::size_t n = cs.size();
  if (scores.size() != n) throw Error(Errc::shape_mismatch, "one score per candidate required");
  auto id_at = [&](std::size_t k) -> const std::string& {
    return k < cs.positives.size() ? cs.positives[k] : cs.negatives[k - cs.positives.size()];
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return id_at(a) < id_at(b);
  });
  ImageRanks r{cs.image_id, {}};
  for (std::size_t pos = 0; pos < n; ++pos)
    if (order[pos] < cs.positives.size()) r.positive_ranks.push_back(pos + 1);
  return r;
}

inline Metrics metrics_from_ranks(std::span<const ImageRanks> ranks) {
  Metrics m;
  m.n_images = ranks.size();
  if (ranks.empty()) return m;
  double hits = 0.0, best = 0.0, mean = 0.0;
  for (const auto& r : ranks) {
    if (r.positive_ranks.empty()) throw Error(Errc::invalid_argument, "image '" + r.image_id + "' has no positives");
    const std::size_t top = *std::min_element(r.positive_ranks.begin(), r.positive_ranks.end());
    hits += top == 1 ? 1.0 : 0.0;
    best += static_cast<double>(top);
    double s = 0.0;
    for (auto k : r.positive_ranks) s += static_cast<double>(k);
    mean += s / static_cast<double>(r.positive_ranks.size());
  }
  const double n = static_cast<double>(ranks.size());
  m.accuracy = 100.0 * hits / n;
  m.rank = best / n;
  m.mean_rank = mean / n;
  return m;
}

/// `scorer(set_index, candidate_set, text_id) -> double`.
template <class Scorer>
Metrics evaluate_scored(std::span<const CandidateSet> sets, Scorer&& scorer, std::vector<ImageRanks>* per_image = nullptr) {
  std::vector<ImageRanks> ranks;
  ranks.reserve(sets.size());
  std::vector<double> scores;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& cs = sets[i];
    scores.clear();
    for (const auto& t : cs.positives) scores.push_back(scorer(i, cs, t));
    for (const auto& t : cs.negatives) scores.push_back(scorer(i, cs, t));
    ranks.push_back(rank_candidates(cs, scores));
  }
  auto m = metrics_from_ranks(ranks);
  if (per_image) *per_image = std::move(ranks);
  return m;
}

/// Dot-product retrieval. `image_feature(image_id) -> Vec`,
/// `text_feature(text_id) -> Vec` (or const Vec&).
template <class ImageFeature, class TextFeature>
Metrics evaluate(std::span<const CandidateSet> sets, ImageFeature&& image_feature, TextFeature&& text_feature,
                 std::vector<ImageRanks>* per_image = nullptr) {
  std::string current;
  Vec query;
  return evaluate_scored(
      sets,
      [&](std::size_t, const CandidateSet& cs, const std::string& text_id) {
        if (cs.image_id != current || query.size() == 0) {
          query = image_feature(cs.image_id);
          current = cs.image_id;
        }
        const Vec& t = text_feature(text_id);
        if (t.size() != query.size()) throw Error(Errc::dimension_mismatch, "text '" + text_id + "' dim mismatch");
        return dot(query, t);
      },
      per_image);
}

}  // namespace kafa
