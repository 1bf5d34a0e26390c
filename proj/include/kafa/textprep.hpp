// SPDX-License-Identifier: Apache-2.0
#pragma once

// OCR paragraph grouping and annotation-text cleaning.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/io.hpp"
#include "kafa/rng.hpp"
#include "kafa/text.hpp"

namespace kafa {

struct OcrParagraph {
  std::string text;
  double font_size = 0.0;
  double confidence = 0.0;
  std::int64_t order_index = 0;
};

struct OcrBlock {
  std::string text;
  double confidence = 0.0;
  std::size_t first = 0;  // paragraph positions, inclusive
  std::size_t last = 0;
  bool kept = false;
};

inline constexpr double kFontSizeTolerance = 0.2;
inline constexpr double kMinBlockConfidence = 0.7;

inline bool similar_font(double a, double b) { return std::abs(a - b) <= kFontSizeTolerance * std::max(a, b); }

/// All blocks, kept or not, in reading order.
inline std::vector<OcrBlock> assemble_blocks(std::span<const OcrParagraph> paras) {
  for (std::size_t i = 0; i < paras.size(); ++i) {
    const auto& p = paras[i];
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0))
      throw Error(Errc::invalid_argument, "paragraph confidence must be in [0, 1]");
    if (!(p.font_size > 0.0) || !std::isfinite(p.font_size))
      throw Error(Errc::invalid_argument, "paragraph font size must be positive");
    if (i && p.order_index <= paras[i - 1].order_index)
      throw Error(Errc::invalid_argument, "paragraph order indices must be strictly increasing");
  }
  std::vector<OcrBlock> blocks;
  std::size_t i = 0;
  while (i < paras.size()) {
    std::size_t j = i + 1;
    while (j < paras.size() && similar_font(paras[j - 1].font_size, paras[j].font_size)) ++j;
    OcrBlock b;
    b.first = i;
    b.last = j - 1;
    double weighted = 0.0, plain = 0.0, total_len = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const auto t = trim(paras[k].text);
      const auto len = static_cast<double>(scalar_length(t));
      weighted += len * paras[k].confidence;
      plain += paras[k].confidence;
      total_len += len;
      if (t.empty()) continue;
      if (!b.text.empty()) b.text += ' ';
      b.text += t;
    }
    b.confidence = total_len > 0 ? weighted / total_len : plain / static_cast<double>(j - i);
    b.kept = b.confidence >= kMinBlockConfidence && !b.text.empty();
    blocks.push_back(std::move(b));
    i = j;
  }
  return blocks;
}

inline std::vector<std::string> group_blocks(std::span<const OcrParagraph> paras) {
  std::vector<std::string> out;
  for (auto& b : assemble_blocks(paras))
    if (b.kept) out.push_back(std::move(b.text));
  return out;
}

inline OcrParagraph parse_paragraph(const io::json& j) {
  try {
    return {j.at("text").get<std::string>(), j.at("font_size").get<double>(), j.at("confidence").get<double>(),
            j.at("order_index").get<std::int64_t>()};
  } catch (const io::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("bad OCR paragraph: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Label cleaning

struct CleaningRules {
  std::set<std::string> invalid_answers;
  std::map<std::string, std::string> typo_map;
  std::set<std::string> noninformative_nouns;
  std::set<std::string> stopwords;
  std::set<std::string> verbs;  // modal and verb tokens never counted as nouns
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& [k, v] : typo_map) {
      if (k != ascii_fold(k)) throw Error(Errc::invalid_argument, "typo map key '" + k + "' must be lowercase");
      if (typo_map.count(ascii_fold(v)))
        throw Error(Errc::invalid_argument, "typo map value '" + v + "' is itself a typo key");
    }
  }
};

inline CleaningRules default_cleaning_rules() {
  CleaningRules r;
  r.invalid_answers = {"i don't know", "i dont know", "not an ad", "not sure", "idk", "n/a", "none", "nothing"};
  r.typo_map = {{"becasue", "because"}, {"becaues", "because"}, {"becuase", "because"},
                {"beacuse", "because"}, {"becaus", "because"},  {"bcause", "because"}};
  r.noninformative_nouns = {"product", "products", "thing", "things", "vendor", "vendors", "item", "items", "stuff"};
  r.stopwords = {"a",     "an",    "the",   "i",     "me",    "my",      "we",    "our",   "you",   "your",  "he",
                 "she",   "they",  "them",  "their", "it",    "its",     "this",  "that",  "these", "those", "there",
                 "here",  "and",   "or",    "but",   "so",    "because", "if",    "then",  "than",  "to",    "of",
                 "in",    "on",    "at",    "for",   "from",  "with",    "by",    "about", "as",    "into",  "up",
                 "out",   "not",   "no",    "very",  "more",  "most",    "all",   "any",   "some",  "what",  "which",
                 "who",   "why",   "how",   "when",  "where", "too",     "also",  "just",  "only",  "really"};
  r.verbs = {"should", "would", "could", "can",   "will",  "shall", "must",  "might", "may",  "is",    "am",
             "are",    "was",   "were",  "be",    "been",  "being", "do",    "does",  "did",  "have",  "has",
             "had",    "buy",   "buys",  "get",   "gets",  "use",   "uses",  "go",    "goes", "try",   "make",
             "makes",  "work",  "works", "need",  "needs", "want",  "wants", "like",  "help", "helps", "give",
             "gives",  "keep",  "keeps", "eat",   "drink", "visit", "see",   "watch", "take", "look",  "feel"};
  return r;
}

inline CleaningRules parse_cleaning_rules(const io::json& j) {
  CleaningRules r = default_cleaning_rules();
  auto set_field = [&](const char* key, std::set<std::string>& out) {
    if (!j.contains(key)) return;
    out.clear();
    for (const auto& w : j.at(key)) out.insert(ascii_fold(w.get<std::string>()));
  };
  try {
    set_field("invalid_answers", r.invalid_answers);
    set_field("noninformative_nouns", r.noninformative_nouns);
    set_field("stopwords", r.stopwords);
    set_field("verbs", r.verbs);
    if (j.contains("typo_map")) {
      r.typo_map.clear();
      for (const auto& [k, v] : j.at("typo_map").items()) r.typo_map.emplace(k, v.get<std::string>());
    }
    if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const io::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("bad cleaning rules: ") + e.what());
  }
  r.validate();
  return r;
}

inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

namespace detail {

struct Token {
  std::string lead, core, tail;  // punctuation / word / punctuation
};

inline Token split_token(std::string_view w) {
  std::size_t b = 0, e = w.size();
  auto wordish = [](char c) { return is_word_byte(c) || c == '\''; };
  while (b < e && !wordish(w[b])) ++b;
  while (e > b && !wordish(w[e - 1])) --e;
  return {std::string(w.substr(0, b)), std::string(w.substr(b, e - b)), std::string(w.substr(e))};
}

inline std::vector<Token> tokens(std::string_view text) {
  std::vector<Token> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto sp = text.find(' ', pos);
    if (sp == std::string_view::npos) sp = text.size();
    out.push_back(split_token(text.substr(pos, sp - pos)));
    pos = sp + 1;
  }
  return out;
}

inline std::string strip_trailing_punct(std::string s) {
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?' || s.back() == ',')) s.pop_back();
  return s;
}

}  // namespace detail

enum class Rejection { none, empty, invalid_answer, no_because, no_informative_noun };

inline std::string_view rejection_name(Rejection r) {
  switch (r) {
    case Rejection::none: return "none";
    case Rejection::empty: return "empty";
    case Rejection::invalid_answer: return "invalid_answer";
    case Rejection::no_because: return "no_because";
    case Rejection::no_informative_noun: return "no_informative_noun";
  }
  return "?";
}

struct CleanResult {
  std::optional<std::string> text;
  Rejection reason = Rejection::none;
};

inline CleanResult clean_label_detailed(std::string_view raw, const CleaningRules& rules) {
  std::string text = normalize_whitespace(raw);
  if (text.empty()) return {std::nullopt, Rejection::empty};
  const std::string folded = ascii_fold(text);
  if (rules.invalid_answers.count(folded) || rules.invalid_answers.count(detail::strip_trailing_punct(folded)))
    return {std::nullopt, Rejection::invalid_answer};

  auto toks = detail::tokens(text);
  bool because = false, any_content = false, informative = false;
  std::string repaired;
  for (auto& t : toks) {
    auto key = ascii_fold(t.core);
    if (auto it = rules.typo_map.find(key); it != rules.typo_map.end()) {
      std::string fixed = it->second;
      if (!t.core.empty() && t.core[0] >= 'A' && t.core[0] <= 'Z' && !fixed.empty() && fixed[0] >= 'a' && fixed[0] <= 'z')
        fixed[0] = static_cast<char>(fixed[0] - 'a' + 'A');
      t.core = fixed;
      key = ascii_fold(fixed);
    }
    if (key == "because") because = true;
    if (!key.empty() && !rules.stopwords.count(key) && !rules.verbs.count(key)) {
      any_content = true;
      if (!rules.noninformative_nouns.count(key)) informative = true;
    }
    if (!repaired.empty()) repaired += ' ';
    repaired += t.lead + t.core + t.tail;
  }
  if (!because) return {std::nullopt, Rejection::no_because};
  if (!any_content || !informative) return {std::nullopt, Rejection::no_informative_noun};
  return {repaired, Rejection::none};
}

inline std::optional<std::string> clean_label(std::string_view raw, const CleaningRules& rules) {
  return clean_label_detailed(raw, rules).text;
}

/// Seeded uniform choice among `texts`.
inline const std::string& select_ground_truth(std::span<const std::string> texts, std::uint64_t seed) {
  if (texts.empty()) throw Error(Errc::insufficient_data, "no texts to choose a ground truth from");
  Rng rng(seed);
  return texts[rng.index(texts.size())];
}

struct CleanedImage {
  std::string image_id;
  std::vector<std::string> labels;
  std::optional<std::string> ground_truth;
  std::vector<std::string> rejected;
  bool all_rejected = false;
};

inline CleanedImage clean_image_labels(std::string image_id, std::span<const std::string> raw, const CleaningRules& rules) {
  CleanedImage out{std::move(image_id), {}, std::nullopt, {}, false};
  for (const auto& t : raw) {
    if (auto c = clean_label(t, rules)) out.labels.push_back(std::move(*c));
    else out.rejected.push_back(t);
  }
  out.all_rejected = out.labels.empty();
  if (!out.all_rejected)
    out.ground_truth = select_ground_truth(out.labels, derive_seed(rules.seed, {hash_string(out.image_id)}));
  return out;
}

inline io::ordered_json cleaned_json(const CleanedImage& c) {
  io::ordered_json j;
  j["image_id"] = c.image_id;
  j["labels"] = c.labels;
  j["ground_truth"] = c.ground_truth ? io::ordered_json(*c.ground_truth) : io::ordered_json(nullptr);
  j["rejected"] = c.rejected;
  return j;
}

}  // namespace kafa
