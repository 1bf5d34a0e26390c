// SPDX-License-Identifier: Apache-2.0
#pragma once

// Id-indexed store of unit-norm embedding vectors.
//
// File layout (little-endian):
//   "ADFB" | version u32 | dim u32 | count u64 | count x dim float32
// plus a sidecar `<stem>.ids.jsonl` with one {"row","id","modality"} per row.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/io.hpp"
#include "kafa/linalg.hpp"

namespace kafa {

enum class Modality : std::uint8_t { image, label_text, scene_text, brand_prompt, region };

inline std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::label_text: return "label_text";
    case Modality::scene_text: return "scene_text";
    case Modality::brand_prompt: return "brand_prompt";
    case Modality::region: return "region";
  }
  return "image";
}

inline Modality parse_modality(std::string_view s) {
  for (auto m : {Modality::image, Modality::label_text, Modality::scene_text, Modality::brand_prompt,
                 Modality::region})
    if (modality_name(m) == s) return m;
  throw Error(Errc::invalid_argument, "unknown modality '" + std::string(s) + "'");
}

inline constexpr std::uint32_t kBankVersion = 1;
inline constexpr std::size_t kBankHeaderSize = 4 + 4 + 4 + 8;
inline constexpr double kNormTolerance = 1e-4;
// Vectors this close to unit norm are float32 rounding away from it and are
// stored verbatim; this keeps save/load bit-exact.
inline constexpr double kNormVerbatim = 1e-6;

class FeatureBank {
 public:
  FeatureBank() = default;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  Modality modality() const { return modality_; }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(std::size_t row) const { return ids_.at(row); }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  std::size_t row_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(Errc::unknown_id, "'" + id + "' not in bank");
    return it->second;
  }

  std::span<const float> get(const std::string& id) const { return row(row_of(id)); }

  /// The stored vector widened to 64-bit.
  Vec vec(const std::string& id) const { return to_vec(get(id)); }
  Vec vec(std::size_t row_index) const { return to_vec(row(row_index)); }

  std::span<const float> data() const { return data_; }

  friend bool operator==(const FeatureBank& a, const FeatureBank& b) {
    return a.dim_ == b.dim_ && a.modality_ == b.modality_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  friend class BankBuilder;

  std::size_t dim_ = 0;
  Modality modality_ = Modality::image;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Validates records as they are appended; the finished bank is immutable.
class BankBuilder {
 public:
  BankBuilder(std::size_t dim, Modality modality) {
    if (dim == 0) throw Error(Errc::invalid_argument, "bank dimension must be positive");
    bank_.dim_ = dim;
    bank_.modality_ = modality;
  }

  void reserve(std::size_t n) {
    bank_.ids_.reserve(n);
    bank_.data_.reserve(n * bank_.dim_);
    bank_.index_.reserve(n);
  }

  std::size_t size() const { return bank_.size(); }

  void add(std::string id, std::span<const float> v) {
    if (v.size() != bank_.dim_)
      throw Error(Errc::dimension_mismatch, "record '" + id + "' has dim " + std::to_string(v.size()) +
                                                ", bank dim " + std::to_string(bank_.dim_));
    double sq = 0.0;
    for (float x : v) {
      if (!std::isfinite(x)) throw Error(Errc::non_finite, "record '" + id + "'");
      sq += static_cast<double>(x) * x;
    }
    const double norm = std::sqrt(sq);
    if (std::abs(norm - 1.0) > kNormTolerance)
      throw Error(Errc::unnormalized, "record '" + id + "' has norm " + std::to_string(norm));
    if (bank_.index_.count(id)) throw Error(Errc::duplicate_id, "'" + id + "'");

    const std::size_t row = bank_.ids_.size();
    if (std::abs(norm - 1.0) > kNormVerbatim) {
      for (float x : v) bank_.data_.push_back(static_cast<float>(x / norm));
    } else {
      bank_.data_.insert(bank_.data_.end(), v.begin(), v.end());
    }
    bank_.index_.emplace(id, row);
    bank_.ids_.push_back(std::move(id));
  }

  void add(std::string id, const Vec& v) {
    std::vector<float> f(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    add(std::move(id), f);
  }

  FeatureBank build() && { return std::move(bank_); }

 private:
  FeatureBank bank_;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& bank_path) {
  auto p = bank_path;
  p.replace_extension(".ids.jsonl");
  return p;
}

inline std::string encode_bank(const FeatureBank& bank) {
  io::Writer w;
  w.bytes("ADFB");
  w.le(kBankVersion);
  w.le(static_cast<std::uint32_t>(bank.dim()));
  w.le(static_cast<std::uint64_t>(bank.size()));
  for (float x : bank.data()) w.f32(x);
  return w.buffer();
}

inline std::string encode_sidecar(const FeatureBank& bank) {
  std::string out;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    io::ordered_json row;
    row["row"] = i;
    row["id"] = bank.id(i);
    row["modality"] = modality_name(bank.modality());
    out += row.dump();
    out += '\n';
  }
  return out;
}

inline void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  io::write_file(path, encode_bank(bank));
  io::write_file(sidecar_path(path), encode_sidecar(bank));
}

/// `fallback` is the modality reported for an empty bank, whose sidecar has
/// no rows to carry it.
inline FeatureBank load_bank(const std::filesystem::path& path, Modality fallback = Modality::image) {
  const auto bytes = io::read_file(path);
  io::Reader r(std::string_view(bytes.data(), bytes.size()), Errc::corrupt_header);
  if (bytes.size() < kBankHeaderSize || r.bytes(4) != "ADFB")
    throw Error(Errc::corrupt_header, path.string() + ": bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kBankVersion)
    throw Error(Errc::corrupt_header, path.string() + ": unsupported version " + std::to_string(version));
  const auto dim = r.le<std::uint32_t>();
  const auto count = r.le<std::uint64_t>();
  if (dim == 0) throw Error(Errc::corrupt_header, path.string() + ": zero dimension");
  if (count > (bytes.size() - kBankHeaderSize) / (4ull * dim) ||
      r.remaining() != count * dim * 4ull)
    throw Error(Errc::dimension_mismatch, path.string() + ": payload size inconsistent with dim=" +
                                              std::to_string(dim) + " count=" + std::to_string(count));

  const auto rows = io::read_jsonl(sidecar_path(path));
  if (rows.size() != count)
    throw Error(Errc::dimension_mismatch, sidecar_path(path).string() + ": " + std::to_string(rows.size()) +
                                              " ids for " + std::to_string(count) + " rows");
  Modality modality = fallback;
  std::vector<std::string> ids(count);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (!row.is_object() || !row.contains("row") || !row.contains("id") || !row.contains("modality") ||
        !row["row"].is_number_integer() || !row["id"].is_string())
      throw Error(Errc::corrupt_header, sidecar_path(path).string() + ": malformed line " + std::to_string(i + 1));
    if (row["row"].get<std::int64_t>() != static_cast<std::int64_t>(i))
      throw Error(Errc::corrupt_header, sidecar_path(path).string() + ": rows not contiguous at line " +
                                            std::to_string(i + 1));
    const Modality m = parse_modality(row["modality"].get<std::string>());
    if (i == 0) modality = m;
    else if (m != modality)
      throw Error(Errc::corrupt_header, sidecar_path(path).string() + ": mixed modalities");
    ids[i] = row["id"].get<std::string>();
  }

  BankBuilder builder(dim, modality);
  builder.reserve(count);
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& x : v) x = r.f32();
    builder.add(std::move(ids[i]), v);
  }
  return std::move(builder).build();
}

}  // namespace kafa
