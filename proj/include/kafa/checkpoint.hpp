// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint layout (little-endian):
//   "ADCK" | version u32 | kind u8 | dim u32 | heads u32 | qkv_bias u8 | seed u64
//   | n_input u32 | n_input x branch u8 | logit_scale f64
//   | per tensor: element count u64, float32 values
// Tensors follow the adapter's for_each_tensor order.

#include <cstdint>
#include <filesystem>
#include <string>

#include "kafa/adapter.hpp"
#include "kafa/io.hpp"

namespace kafa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  AdapterParams params;
  double logit_scale = 0.0;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& cfg = config_of(ck.params);
  io::Writer w;
  w.bytes("ADCK");
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint8_t>(cfg.kind));
  w.le(static_cast<std::uint32_t>(cfg.dim));
  w.le(static_cast<std::uint32_t>(cfg.heads));
  w.le(static_cast<std::uint8_t>(cfg.qkv_bias));
  w.le(cfg.seed);
  w.le(static_cast<std::uint32_t>(cfg.n_input()));
  for (Branch b : cfg.inputs) w.le(static_cast<std::uint8_t>(b));
  w.f64(ck.logit_scale);
  std::visit(
      [&](const auto& p) {
        p.for_each_tensor([&](std::string_view, auto t) {
          w.le(static_cast<std::uint64_t>(t.size()));
          for (double x : t) w.f32(static_cast<float>(x));
        });
      },
      ck.params);
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  io::Reader r(bytes, Errc::corrupt_header);
  if (r.bytes(4) != "ADCK") throw Error(Errc::corrupt_header, "checkpoint: bad magic");
  if (r.le<std::uint32_t>() != kCheckpointVersion) throw Error(Errc::corrupt_header, "checkpoint: unsupported version");
  AdapterConfig cfg;
  const auto kind = r.le<std::uint8_t>();
  if (kind > 1) throw Error(Errc::corrupt_header, "checkpoint: bad adapter kind");
  cfg.kind = static_cast<AdapterKind>(kind);
  cfg.dim = r.le<std::uint32_t>();
  cfg.heads = r.le<std::uint32_t>();
  cfg.qkv_bias = r.le<std::uint8_t>() != 0;
  cfg.seed = r.le<std::uint64_t>();
  const auto n = r.le<std::uint32_t>();
  if (n == 0 || n > 3) throw Error(Errc::corrupt_header, "checkpoint: bad input count");
  cfg.inputs.clear();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto b = r.le<std::uint8_t>();
    if (b > 2) throw Error(Errc::corrupt_header, "checkpoint: bad input branch");
    cfg.inputs.push_back(static_cast<Branch>(b));
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(Errc::corrupt_header, std::string("checkpoint: ") + e.what());
  }
  Checkpoint ck{init_params(cfg), r.f64()};
  std::visit(
      [&](auto& p) {
        p.for_each_tensor([&](std::string_view name, auto t) {
          if (r.le<std::uint64_t>() != t.size())
            throw Error(Errc::shape_mismatch, "checkpoint tensor " + std::string(name) + " has the wrong size");
          for (double& x : t) {
            const float f = r.f32();
            if (!std::isfinite(f)) throw Error(Errc::non_finite, "checkpoint tensor " + std::string(name));
            x = f;
          }
        });
      },
      ck.params);
  if (r.remaining() != 0) throw Error(Errc::corrupt_header, "checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_checkpoint(std::string_view(bytes.data(), bytes.size()));
}

}  // namespace kafa
