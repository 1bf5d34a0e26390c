// SPDX-License-Identifier: Apache-2.0
#pragma once

// Vision-side brand scoring over region features and per-entry prompt
// features, and the text/vision arbitration.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kafa/brand_kb.hpp"
#include "kafa/error.hpp"
#include "kafa/feature_bank.hpp"
#include "kafa/linalg.hpp"

namespace kafa {

inline constexpr std::size_t kPromptsPerEntry = 6;

/// The six scoring prompts followed by the advertisement prompt.
inline std::vector<std::string> prompt_texts(std::string_view name, std::string_view description) {
  const std::string x(name), y(description);
  return {"A brand logo of " + x,
          "A logo of " + x,
          "A trademark of " + x,
          "A brand logo of " + x + ". " + y,
          "A logo of " + x + ". " + y,
          "A trademark of " + x + ". " + y,
          "An advertisement of " + x};
}

inline std::string prompt_id(std::string_view name, std::size_t k) { return std::string(name) + "/prompt/" + std::to_string(k); }
inline std::string ad_prompt_id(std::string_view name) { return std::string(name) + "/ad"; }

/// Row lookup into a prompt bank for an ordered list of entry names.
class PromptBank {
 public:
  PromptBank(const FeatureBank& bank, std::vector<std::string> names) : bank_(&bank), names_(std::move(names)) {
    rows_.reserve(names_.size());
    for (const auto& n : names_) {
      Rows r;
      for (std::size_t k = 0; k < kPromptsPerEntry; ++k) r.prompt[k] = lookup(prompt_id(n, k), n);
      r.ad = lookup(ad_prompt_id(n), n);
      rows_.push_back(r);
      index_.emplace(n, rows_.size() - 1);
    }
    if (index_.size() != names_.size()) throw Error(Errc::duplicate_id, "repeated entry name in prompt bank");
  }

  static PromptBank for_kb(const FeatureBank& bank, const KnowledgeBase& kb) {
    std::vector<std::string> names;
    names.reserve(kb.size());
    for (const auto& e : kb.entries()) names.push_back(e.name);
    return PromptBank(bank, std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  std::size_t dim() const { return bank_->dim(); }
  const std::string& name(std::size_t e) const { return names_.at(e); }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw Error(Errc::unknown_id, "no prompt features for '" + std::string(name) + "'");
    return it->second;
  }

  std::span<const float> prompt(std::size_t e, std::size_t k) const { return bank_->row(rows_.at(e).prompt.at(k)); }
  std::span<const float> ad(std::size_t e) const { return bank_->row(rows_.at(e).ad); }

 private:
  struct Rows {
    std::array<std::size_t, kPromptsPerEntry> prompt{};
    std::size_t ad = 0;
  };

  std::size_t lookup(const std::string& id, const std::string& name) const {
    auto r = bank_->find(id);
    if (!r) throw Error(Errc::unknown_id, "entry '" + name + "' is missing prompt feature '" + id + "'");
    return *r;
  }

  const FeatureBank* bank_;
  std::vector<std::string> names_;
  std::vector<Rows> rows_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Entry x region matrix: mean over the six prompts of region . prompt.
inline Mat score_entries(std::span<const Vec> regions, const PromptBank& prompts) {
  if (regions.empty()) throw Error(Errc::invalid_argument, "no regions to score");
  for (const auto& r : regions)
    if (static_cast<std::size_t>(r.size()) != prompts.dim())
      throw Error(Errc::dimension_mismatch, "region feature dim " + std::to_string(r.size()));
  const auto E = static_cast<Eigen::Index>(prompts.size());
  const auto R = static_cast<Eigen::Index>(regions.size());
  Mat s(E, R);
  for (Eigen::Index e = 0; e < E; ++e)
    for (Eigen::Index r = 0; r < R; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kPromptsPerEntry; ++k)
        acc += dot(flat(regions[static_cast<std::size_t>(r)]), prompts.prompt(static_cast<std::size_t>(e), k));
      s(e, r) = acc / static_cast<double>(kPromptsPerEntry);
    }
  return s;
}

struct VisionDecision {
  std::size_t entry = 0;
  std::size_t candidate_a = 0;  // best single cell
  std::size_t candidate_b = 0;  // best region-mean among champions
  bool ad_tie = false;          // A and B tied on the advertisement prompt; resolved by name
};

namespace detail {

/// True when (score a, name a) beats (score b, name b).
inline bool better(double sa, const std::string& na, double sb, const std::string& nb) {
  return sa != sb ? sa > sb : na < nb;
}

}  // namespace detail

inline double ad_score(const Vec& global_feat, const PromptBank& prompts, std::size_t e) {
  return dot(flat(global_feat), prompts.ad(e));
}

inline VisionDecision select_vision_candidate(const Mat& scores, const Vec& global_feat, const PromptBank& prompts) {
  const Eigen::Index E = scores.rows(), R = scores.cols();
  if (E == 0 || R == 0) throw Error(Errc::invalid_argument, "empty score matrix");
  if (static_cast<std::size_t>(E) != prompts.size()) throw Error(Errc::shape_mismatch, "score rows must match prompt entries");
  auto name = [&](Eigen::Index e) -> const std::string& { return prompts.name(static_cast<std::size_t>(e)); };

  Eigen::Index a = 0;
  double a_score = scores(0, 0);
  for (Eigen::Index e = 0; e < E; ++e)
    for (Eigen::Index r = 0; r < R; ++r)
      if (detail::better(scores(e, r), name(e), a_score, name(a))) {
        a = e;
        a_score = scores(e, r);
      }

  std::vector<bool> champion(static_cast<std::size_t>(E), false);
  for (Eigen::Index r = 0; r < R; ++r) {
    Eigen::Index w = 0;
    for (Eigen::Index e = 1; e < E; ++e)
      if (detail::better(scores(e, r), name(e), scores(w, r), name(w))) w = e;
    champion[static_cast<std::size_t>(w)] = true;
  }
  std::optional<Eigen::Index> b;
  double b_mean = 0.0;
  for (Eigen::Index e = 0; e < E; ++e) {
    if (!champion[static_cast<std::size_t>(e)]) continue;
    double m = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) m += scores(e, r);
    m /= static_cast<double>(R);
    if (!b || detail::better(m, name(e), b_mean, name(*b))) {
      b = e;
      b_mean = m;
    }
  }

  VisionDecision d;
  d.candidate_a = static_cast<std::size_t>(a);
  d.candidate_b = static_cast<std::size_t>(*b);
  if (d.candidate_a == d.candidate_b) {
    d.entry = d.candidate_a;
    return d;
  }
  const double sa = ad_score(global_feat, prompts, d.candidate_a), sb = ad_score(global_feat, prompts, d.candidate_b);
  d.ad_tie = sa == sb;
  d.entry = detail::better(sa, name(a), sb, name(*b)) ? d.candidate_a : d.candidate_b;
  return d;
}

enum class PredictionPath { text, vision, ensemble };

inline std::string_view path_name(PredictionPath p) {
  switch (p) {
    case PredictionPath::text: return "text";
    case PredictionPath::vision: return "vision";
    case PredictionPath::ensemble: return "ensemble";
  }
  return "?";
}

struct EnsembleDecision {
  std::string name;
  PredictionPath path = PredictionPath::vision;
  bool ad_tie = false;
};

/// Text matches (in match order) arbitrated against the vision result.
inline EnsembleDecision ensemble(std::span<const std::string> text_matches, const std::string& vision_result,
                                 const Vec& global_feat, const PromptBank& prompts) {
  if (text_matches.empty()) return {vision_result, PredictionPath::vision, false};
  if (text_matches.size() == 1) return {text_matches[0], PredictionPath::text, false};
  std::vector<std::string> pool(text_matches.begin(), text_matches.end());
  pool.push_back(vision_result);
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  EnsembleDecision d{pool[0], PredictionPath::ensemble, false};
  double best = ad_score(global_feat, prompts, prompts.index_of(pool[0]));
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const double s = ad_score(global_feat, prompts, prompts.index_of(pool[i]));
    if (s == best) d.ad_tie = true;
    if (s > best) {
      best = s;
      d.name = pool[i];
      d.ad_tie = false;
    }
  }
  return d;
}

/// Region rows of one image: proposals by ascending index, then the global row.
struct ImageRegions {
  std::string image_id;
  std::vector<std::size_t> rows;
  std::size_t global_row = 0;
};

inline std::vector<ImageRegions> group_regions(const FeatureBank& bank) {
  struct Acc {
    std::vector<std::pair<std::uint64_t, std::size_t>> regions;
    std::optional<std::size_t> global;
    std::size_t first_row;
  };
  std::map<std::string, Acc> by_image;
  std::vector<std::string> order;
  auto acc_for = [&](const std::string& image, std::size_t row) -> Acc& {
    auto [it, fresh] = by_image.try_emplace(image, Acc{{}, std::nullopt, row});
    if (fresh) order.push_back(image);
    return it->second;
  };
  constexpr std::string_view kGlobal = "/global", kRegion = "/region/";
  for (std::size_t row = 0; row < bank.size(); ++row) {
    const std::string& id = bank.id(row);
    if (id.size() > kGlobal.size() && id.ends_with(kGlobal)) {
      auto& a = acc_for(id.substr(0, id.size() - kGlobal.size()), row);
      if (a.global) throw Error(Errc::duplicate_id, "second global region for '" + id + "'");
      a.global = row;
      continue;
    }
    const auto p = id.rfind(kRegion);
    std::uint64_t k = 0;
    const char* begin = id.data() + (p == std::string::npos ? 0 : p + kRegion.size());
    const char* end = id.data() + id.size();
    if (p == std::string::npos || p == 0 || begin == end || std::from_chars(begin, end, k).ptr != end)
      throw Error(Errc::invalid_argument, "region id '" + id + "' is not '<image>/region/<k>' or '<image>/global'");
    acc_for(id.substr(0, p), row).regions.emplace_back(k, row);
  }
  std::vector<ImageRegions> out;
  out.reserve(order.size());
  for (const auto& image : order) {
    auto& a = by_image.at(image);
    if (!a.global) throw Error(Errc::invalid_argument, "image '" + image + "' has no global region");
    std::sort(a.regions.begin(), a.regions.end());
    ImageRegions ir{image, {}, *a.global};
    for (const auto& [k, row] : a.regions) ir.rows.push_back(row);
    ir.rows.push_back(*a.global);
    out.push_back(std::move(ir));
  }
  return out;
}

struct BrandPrediction {
  std::string image_id;
  EnsembleDecision decision;
  VisionDecision vision;
};

/// Full per-image pipeline: text matches over the image's scene text, vision
/// scoring over its regions, then arbitration.
inline BrandPrediction predict_brand(const KnowledgeBase& kb, const PromptBank& prompts, const FeatureBank& region_bank,
                                     const ImageRegions& regions, std::string_view scene_text) {
  std::vector<Vec> feats;
  feats.reserve(regions.rows.size());
  for (auto row : regions.rows) feats.push_back(region_bank.vec(row));
  const Vec global = region_bank.vec(regions.global_row);
  const auto vision = select_vision_candidate(score_entries(feats, prompts), global, prompts);
  std::vector<std::string> names;
  for (const auto& m : kb.match(scene_text)) names.push_back(kb.at(m.entry).name);
  return {regions.image_id, ensemble(names, prompts.name(vision.entry), global, prompts), vision};
}

}  // namespace kafa
