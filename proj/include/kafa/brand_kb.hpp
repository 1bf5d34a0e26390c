// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brand knowledge base: ingestion filters and the phrase matcher.
//
// Names of more than 6 characters (Unicode scalar values) match with ASCII
// case folding, shorter ones match exactly. A match must be delimited on
// both sides by the string boundary or a non-alphanumeric byte; bytes >= 0x80
// count as alphanumeric so multi-byte letters never act as delimiters.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
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

enum class BrandSource : std::uint8_t { curated_list, knowledge_graph, synthesized };

inline std::string_view source_name(BrandSource s) {
  switch (s) {
    case BrandSource::curated_list: return "curated_list";
    case BrandSource::knowledge_graph: return "knowledge_graph";
    case BrandSource::synthesized: return "synthesized";
  }
  return "?";
}

inline BrandSource parse_source(std::string_view s) {
  if (s == "curated_list") return BrandSource::curated_list;
  if (s == "knowledge_graph") return BrandSource::knowledge_graph;
  if (s == "synthesized") return BrandSource::synthesized;
  throw Error(Errc::invalid_argument, "unknown brand source '" + std::string(s) + "'");
}

struct RawBrandEntry {
  std::string name;
  std::string description;  // empty when the source had none
  BrandSource source = BrandSource::knowledge_graph;
  std::string industry;     // used only to synthesize a missing description
};

struct BrandEntry {
  std::string name;
  std::string description;
  BrandSource source = BrandSource::knowledge_graph;
  friend bool operator==(const BrandEntry&, const BrandEntry&) = default;
};

inline constexpr std::size_t kCaseSensitiveMaxLength = 6;

inline bool case_insensitive_name(std::string_view name) { return scalar_length(name) > kCaseSensitiveMaxLength; }

/// Up to and including the first '.' followed by whitespace or the end.
inline std::string first_sentence(std::string_view s) {
  s = trim(s);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == '.' && (i + 1 == s.size() || s[i + 1] == ' ' || s[i + 1] == '\t' || s[i + 1] == '\n' || s[i + 1] == '\r'))
      return std::string(s.substr(0, i + 1));
  return std::string(s);
}

inline std::string fallback_description(std::string_view name, std::string_view industry) {
  if (trim(industry).empty()) return std::string(name) + " is a brand name.";
  return std::string(name) + " is a brand name in the industry of " + std::string(trim(industry));
}

/// Lower-cased word set, one word per line.
inline std::unordered_set<std::string> parse_word_list(std::string_view text) {
  std::unordered_set<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto w = trim(text.substr(pos, nl - pos));
    if (!w.empty()) out.insert(ascii_fold(w));
    pos = nl + 1;
  }
  return out;
}

inline std::unordered_set<std::string> load_word_list(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  return parse_word_list(std::string_view(bytes.data(), bytes.size()));
}

// ---------------------------------------------------------------------------
// Multi-pattern automaton

class PatternAutomaton {
 public:
  struct Hit {
    std::size_t end;  // one past the last matched byte
    std::uint32_t pattern;
  };

  PatternAutomaton() { nodes_.emplace_back(); }

  void add(std::string_view pattern, std::uint32_t id) {
    if (pattern.empty()) return;
    std::int32_t cur = 0;
    for (char c : pattern) {
      const auto b = static_cast<unsigned char>(c);
      std::int32_t next = child(cur, b);
      if (next < 0) {
        next = static_cast<std::int32_t>(nodes_.size());
        auto& edges = nodes_[static_cast<std::size_t>(cur)].edges;
        edges.insert(std::lower_bound(edges.begin(), edges.end(), Edge{b, 0}), Edge{b, next});
        nodes_.emplace_back();
        nodes_.back().depth = nodes_[static_cast<std::size_t>(cur)].depth + 1;
      }
      cur = next;
    }
    nodes_[static_cast<std::size_t>(cur)].outputs.push_back(id);
  }

  void compile() {
    std::deque<std::int32_t> queue;
    for (const auto& e : nodes_[0].edges) {
      nodes_[static_cast<std::size_t>(e.target)].fail = 0;
      queue.push_back(e.target);
    }
    while (!queue.empty()) {
      const auto u = queue.front();
      queue.pop_front();
      for (const auto& e : nodes_[static_cast<std::size_t>(u)].edges) {
        std::int32_t f = nodes_[static_cast<std::size_t>(u)].fail;
        std::int32_t t;
        while ((t = child(f, e.byte)) < 0 && f != 0) f = nodes_[static_cast<std::size_t>(f)].fail;
        if (t < 0 || t == e.target) t = 0;
        auto& v = nodes_[static_cast<std::size_t>(e.target)];
        v.fail = t;
        const auto& fn = nodes_[static_cast<std::size_t>(t)];
        v.dict = fn.outputs.empty() ? fn.dict : t;
        queue.push_back(e.target);
      }
    }
  }

  template <class F>
  void scan(std::string_view text, F&& on_hit) const {
    std::int32_t cur = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const auto b = static_cast<unsigned char>(text[i]);
      std::int32_t t;
      while ((t = child(cur, b)) < 0 && cur != 0) cur = nodes_[static_cast<std::size_t>(cur)].fail;
      cur = t < 0 ? 0 : t;
      for (std::int32_t o = nodes_[static_cast<std::size_t>(cur)].outputs.empty() ? nodes_[static_cast<std::size_t>(cur)].dict : cur;
           o > 0; o = nodes_[static_cast<std::size_t>(o)].dict)
        for (auto id : nodes_[static_cast<std::size_t>(o)].outputs) on_hit(Hit{i + 1, id});
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Edge {
    unsigned char byte;
    std::int32_t target;
    bool operator<(const Edge& o) const { return byte < o.byte; }
  };
  struct Node {
    std::vector<Edge> edges;
    std::vector<std::uint32_t> outputs;
    std::int32_t fail = 0;
    std::int32_t dict = 0;  // nearest proper suffix node with outputs, 0 if none
    std::int32_t depth = 0;
  };

  std::int32_t child(std::int32_t node, unsigned char b) const {
    const auto& edges = nodes_[static_cast<std::size_t>(node)].edges;
    auto it = std::lower_bound(edges.begin(), edges.end(), Edge{b, 0});
    return it != edges.end() && it->byte == b ? it->target : -1;
  }

  std::vector<Node> nodes_;
};

struct BrandMatch {
  std::size_t entry;     // index into KnowledgeBase::entries()
  std::size_t position;  // byte offset of the first delimited occurrence
  friend bool operator==(const BrandMatch&, const BrandMatch&) = default;
};

inline bool delimited(std::string_view text, std::size_t begin, std::size_t end) {
  return (begin == 0 || !is_word_byte(text[begin - 1])) && (end == text.size() || !is_word_byte(text[end]));
}

struct IngestStats {
  std::size_t raw = 0;
  std::size_t single_character = 0;
  std::size_t common_word = 0;
  std::size_t empty_name = 0;
  std::size_t duplicate = 0;
  std::size_t truncated = 0;
  std::size_t filled = 0;
  std::size_t kept = 0;
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  explicit KnowledgeBase(std::vector<BrandEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (scalar_length(e.name) < 2) throw Error(Errc::invalid_argument, "brand name '" + e.name + "' is too short");
      if (e.description.empty()) throw Error(Errc::invalid_argument, "brand '" + e.name + "' has no description");
      if (!index_.emplace(e.name, i).second) throw Error(Errc::duplicate_id, "brand '" + e.name + "'");
    }
    compile();
  }

  const std::vector<BrandEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const BrandEntry& at(std::size_t i) const { return entries_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  }

  /// Entries occurring as a delimited phrase, by first position then name.
  std::vector<BrandMatch> match(std::string_view text) const {
    std::unordered_map<std::size_t, std::size_t> first;
    auto record = [&](std::size_t entry, std::size_t begin, std::size_t end) {
      if (!delimited(text, begin, end)) return;
      auto [it, fresh] = first.emplace(entry, begin);
      if (!fresh && begin < it->second) it->second = begin;
    };
    exact_.scan(text, [&](PatternAutomaton::Hit h) {
      const auto e = short_ids_[h.pattern];
      record(e, h.end - entries_[e].name.size(), h.end);
    });
    if (!long_ids_.empty()) {
      const auto folded = ascii_fold(text);
      folded_.scan(folded, [&](PatternAutomaton::Hit h) {
        const auto e = long_ids_[h.pattern];
        record(e, h.end - entries_[e].name.size(), h.end);
      });
    }
    return ordered(first);
  }

  std::vector<BrandMatch> ordered(const std::unordered_map<std::size_t, std::size_t>& first) const {
    std::vector<BrandMatch> out;
    out.reserve(first.size());
    for (auto [e, p] : first) out.push_back({e, p});
    std::sort(out.begin(), out.end(), [&](const BrandMatch& a, const BrandMatch& b) {
      if (a.position != b.position) return a.position < b.position;
      return entries_[a.entry].name < entries_[b.entry].name;
    });
    return out;
  }

 private:
  void compile() {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& name = entries_[i].name;
      if (case_insensitive_name(name)) {
        folded_.add(ascii_fold(name), static_cast<std::uint32_t>(long_ids_.size()));
        long_ids_.push_back(i);
      } else {
        exact_.add(name, static_cast<std::uint32_t>(short_ids_.size()));
        short_ids_.push_back(i);
      }
    }
    exact_.compile();
    folded_.compile();
  }

  std::vector<BrandEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  PatternAutomaton exact_, folded_;
  std::vector<std::size_t> short_ids_, long_ids_;
};

/// Reference matcher: scans for every name separately.
inline std::vector<BrandMatch> naive_match(const KnowledgeBase& kb, std::string_view text) {
  std::unordered_map<std::size_t, std::size_t> first;
  const auto folded = ascii_fold(text);
  for (std::size_t e = 0; e < kb.size(); ++e) {
    const auto& name = kb.at(e).name;
    const bool fold = case_insensitive_name(name);
    const std::string needle = fold ? ascii_fold(name) : name;
    std::string_view hay = fold ? std::string_view(folded) : text;
    for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) {
      if (delimited(text, p, p + needle.size())) {
        first.emplace(e, p);
        break;
      }
    }
  }
  return kb.ordered(first);
}

inline KnowledgeBase ingest(const std::vector<RawBrandEntry>& raw, const std::unordered_set<std::string>& common_words,
                            IngestStats* stats = nullptr) {
  if (raw.empty()) throw Error(Errc::invalid_argument, "no raw brand entries");
  IngestStats st;
  st.raw = raw.size();
  std::vector<BrandEntry> kept;
  std::unordered_set<std::string> seen;
  for (const auto& r : raw) {
    const std::string name(trim(r.name));
    if (name.empty()) {
      ++st.empty_name;
      continue;
    }
    if (scalar_length(name) < 2) {
      ++st.single_character;
      continue;
    }
    if (common_words.count(ascii_fold(name))) {
      ++st.common_word;
      continue;
    }
    if (!seen.insert(name).second) {
      ++st.duplicate;
      continue;
    }
    std::string desc = first_sentence(r.description);
    if (desc.empty()) {
      desc = fallback_description(name, r.industry);
      ++st.filled;
    } else if (desc.size() < trim(r.description).size()) {
      ++st.truncated;
    }
    kept.push_back({name, std::move(desc), r.source});
  }
  st.kept = kept.size();
  if (stats) *stats = st;
  if (kept.empty()) throw Error(Errc::insufficient_data, "every brand entry was filtered out");
  return KnowledgeBase(std::move(kept));
}

inline RawBrandEntry parse_raw_entry(const io::json& j) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
    throw Error(Errc::invalid_argument, "brand source row needs a string 'name'");
  RawBrandEntry r;
  r.name = j["name"].get<std::string>();
  if (j.contains("description") && !j["description"].is_null()) r.description = j["description"].get<std::string>();
  if (j.contains("source")) r.source = parse_source(j["source"].get<std::string>());
  if (j.contains("industry") && !j["industry"].is_null()) r.industry = j["industry"].get<std::string>();
  return r;
}

inline std::vector<RawBrandEntry> load_raw_entries(const std::filesystem::path& path) {
  std::vector<RawBrandEntry> out;
  for (const auto& j : io::read_jsonl(path)) out.push_back(parse_raw_entry(j));
  return out;
}

inline io::ordered_json entry_json(const BrandEntry& e) {
  io::ordered_json j;
  j["name"] = e.name;
  j["description"] = e.description;
  j["source"] = std::string(source_name(e.source));
  return j;
}

// Compiled cache: "ADKB" | version u32 | count u64 | (name, description, source u8)*

inline constexpr std::uint32_t kKbVersion = 1;

inline std::string encode_kb(const KnowledgeBase& kb) {
  io::Writer w;
  w.bytes("ADKB");
  w.le<std::uint32_t>(kKbVersion);
  w.le<std::uint64_t>(kb.size());
  for (const auto& e : kb.entries()) {
    w.str(e.name);
    w.str(e.description);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.source));
  }
  return w.buffer();
}

inline KnowledgeBase decode_kb(std::string_view bytes) {
  io::Reader r(bytes, Errc::corrupt_header);
  if (r.bytes(4) != "ADKB") throw Error(Errc::corrupt_header, "not a knowledge-base cache");
  if (r.le<std::uint32_t>() != kKbVersion) throw Error(Errc::corrupt_header, "unsupported knowledge-base version");
  const auto n = r.le<std::uint64_t>();
  std::vector<BrandEntry> entries;
  for (std::uint64_t i = 0; i < n; ++i) {
    BrandEntry e;
    e.name = r.str();
    e.description = r.str();
    const auto s = r.le<std::uint8_t>();
    if (s > static_cast<std::uint8_t>(BrandSource::synthesized)) throw Error(Errc::corrupt_header, "bad brand source");
    e.source = static_cast<BrandSource>(s);
    entries.push_back(std::move(e));
  }
  if (r.remaining()) throw Error(Errc::corrupt_header, "trailing bytes in knowledge-base cache");
  return KnowledgeBase(std::move(entries));
}

inline void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path) { io::write_file(path, encode_kb(kb)); }

inline KnowledgeBase load_kb(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  return decode_kb(std::string_view(bytes.data(), bytes.size()));
}

/// One of several matches, chosen reproducibly from (seed, key).
inline std::optional<BrandMatch> pick_one(std::span<const BrandMatch> matches, std::uint64_t seed, std::string_view key) {
  if (matches.empty()) return std::nullopt;
  Rng rng(derive_seed(seed, {hash_string(key)}));
  return matches[rng.index(matches.size())];
}

}  // namespace kafa
