// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/io.hpp"

namespace kafa {

enum class Split { train, val, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::invalid_argument, "unknown split '" + std::string(s) + "'");
}

/// One (image, label text) pair.
struct ManifestRow {
  std::string image_id;
  std::string label_text_id;
  std::optional<std::string> scene_text_id;
  std::optional<std::string> brand_id;
  Split split = Split::train;
};

/// All label texts of one image, with its per-image side inputs.
struct ImageRecord {
  std::string image_id;
  std::vector<std::string> texts;
  std::optional<std::string> scene_text_id;
  std::optional<std::string> brand_id;
};

inline ManifestRow parse_manifest_row(const io::json& j) {
  auto req = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j[key].is_string()) throw Error(Errc::invalid_argument, std::string("manifest row missing '") + key + "'");
    return j[key].get<std::string>();
  };
  auto opt = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw Error(Errc::invalid_argument, std::string("manifest field '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  return {req("image_id"), req("label_text_id"), opt("scene_text_id"), opt("brand_id"), parse_split(req("split"))};
}

inline io::ordered_json manifest_row_json(const ManifestRow& r) {
  io::ordered_json j;
  j["image_id"] = r.image_id;
  j["label_text_id"] = r.label_text_id;
  if (r.scene_text_id) j["scene_text_id"] = *r.scene_text_id;
  if (r.brand_id) j["brand_id"] = *r.brand_id;
  j["split"] = split_name(r.split);
  return j;
}

inline std::vector<ManifestRow> load_manifest(const std::filesystem::path& path) {
  std::vector<ManifestRow> rows;
  for (const auto& j : io::read_jsonl(path)) rows.push_back(parse_manifest_row(j));
  return rows;
}

inline void save_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::vector<io::ordered_json> js;
  for (const auto& r : rows) js.push_back(manifest_row_json(r));
  io::write_file(path, io::to_jsonl(js));
}

/// Images of one split in order of first appearance.
inline std::vector<ImageRecord> images_in_split(const std::vector<ManifestRow>& rows, Split split) {
  std::vector<ImageRecord> out;
  std::unordered_map<std::string, std::size_t> at;
  for (const auto& r : rows) {
    if (r.split != split) continue;
    auto [it, fresh] = at.emplace(r.image_id, out.size());
    if (fresh) out.push_back({r.image_id, {}, r.scene_text_id, r.brand_id});
    auto& rec = out[it->second];
    if (rec.scene_text_id != r.scene_text_id || rec.brand_id != r.brand_id)
      throw Error(Errc::invalid_argument, "image '" + r.image_id + "' has inconsistent scene-text/brand ids");
    rec.texts.push_back(r.label_text_id);
  }
  return out;
}

}  // namespace kafa
