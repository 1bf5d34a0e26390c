// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded fusion dataset. Each image's message is a unit vector t (its label
// text). The coordinates are split into three blocks; the image feature sees
// the first block of t, scene text the second, brand the rest, each with
// in-block noise plus a little isotropic noise. No single modality pins t
// down, their sum nearly does.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/feature_bank.hpp"
#include "kafa/linalg.hpp"
#include "kafa/manifest.hpp"
#include "kafa/rng.hpp"

namespace kafa {

struct SynthConfig {
  std::size_t dim = 64;
  double image_share = 0.34;
  double scene_text_share = 0.33;
  double block_noise = 0.8;
  double shared_noise = 0.3;
  std::size_t n_train = 4000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::uint64_t seed = 0;
};

struct SynthData {
  FeatureBank image, scene_text, brand, label_text;
  std::vector<ManifestRow> manifest;
};

inline std::string synth_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

inline SynthData make_synthetic(const SynthConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto n_img = static_cast<Eigen::Index>(std::lround(cfg.image_share * static_cast<double>(cfg.dim)));
  const auto n_st = static_cast<Eigen::Index>(std::lround(cfg.scene_text_share * static_cast<double>(cfg.dim)));
  if (cfg.dim < 3 || n_img < 1 || n_st < 1 || n_img + n_st >= d)
    throw Error(Errc::invalid_argument, "each modality needs at least one coordinate");
  const Eigen::Index begin[3] = {0, n_img, n_img + n_st};
  const Eigen::Index end[3] = {n_img, n_img + n_st, d};

  const std::size_t n = cfg.n_train + cfg.n_val + cfg.n_test;
  BankBuilder text(cfg.dim, Modality::label_text), img(cfg.dim, Modality::image), st(cfg.dim, Modality::scene_text),
      br(cfg.dim, Modality::brand_prompt);
  for (auto* b : {&text, &img, &st, &br}) b->reserve(n);

  Rng rng(cfg.seed);
  SynthData out;
  out.manifest.reserve(n);
  Vec t(d), f(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) t[k] = rng.normal();
    t = l2_normalized(t);
    BankBuilder* sinks[3] = {&img, &st, &br};
    const char* prefixes[3] = {"img", "st", "brand"};
    for (int m = 0; m < 3; ++m) {
      const double block = std::sqrt(static_cast<double>(end[m] - begin[m]));
      for (Eigen::Index k = 0; k < d; ++k) {
        const bool inside = k >= begin[m] && k < end[m];
        f[k] = inside ? t[k] + cfg.block_noise * rng.normal() / block : 0.0;
        f[k] += cfg.shared_noise * rng.normal() / std::sqrt(static_cast<double>(d));
      }
      sinks[m]->add(synth_id(prefixes[m], i), l2_normalized(f));
    }
    text.add(synth_id("txt", i), t);

    ManifestRow row;
    row.image_id = synth_id("img", i);
    row.label_text_id = synth_id("txt", i);
    row.scene_text_id = synth_id("st", i);
    row.brand_id = synth_id("brand", i);
    row.split = i < cfg.n_train ? Split::train : i < cfg.n_train + cfg.n_val ? Split::val : Split::test;
    out.manifest.push_back(std::move(row));
  }
  out.image = std::move(img).build();
  out.scene_text = std::move(st).build();
  out.brand = std::move(br).build();
  out.label_text = std::move(text).build();
  return out;
}

}  // namespace kafa
