// SPDX-License-Identifier: Apache-2.0
#pragma once

// Contrastive fine-tuning of a feature adapter over frozen embedding banks.
//
// Per step: adapt image-side features, pick hard negatives (optional), build
// score rows [positive | negatives], loss = contrastive + anchor regularizer,
// backprop through the adapter and the logit scale, Adam update. Per epoch:
// validate on a K-candidate protocol, keep the best snapshot, stop on decline.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "kafa/adapter.hpp"
#include "kafa/checkpoint.hpp"
#include "kafa/error.hpp"
#include "kafa/feature_bank.hpp"
#include "kafa/hnm.hpp"
#include "kafa/linalg.hpp"
#include "kafa/loss.hpp"
#include "kafa/manifest.hpp"
#include "kafa/optim.hpp"
#include "kafa/retrieval.hpp"
#include "kafa/rng.hpp"

namespace kafa {

inline const double kLogitScaleInit = std::log(1.0 / 0.07);
inline const double kLogitScaleMax = std::log(100.0);

struct TrainConfig {
  LossMode loss_mode = LossMode::asymmetric;
  HnmStrategy hnm = HnmStrategy::full;
  std::size_t n_cand = 1000;
  std::size_t n_hard = 8;
  std::size_t batch_size = 0;  // 0: 4 with hard negatives, 8 without
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double reg_coeff = 5.0;
  std::size_t max_epochs = 10;
  std::size_t patience = 1;  // epochs of validation decline tolerated; 0 disables early stopping
  double momentum_m = 0.999;
  std::size_t bank_refresh_period = 0;  // steps; 0 refreshes once per epoch
  std::size_t val_k = 100;
  std::uint64_t seed = 0;

  std::size_t effective_batch_size() const {
    if (batch_size) return batch_size;
    return hnm == HnmStrategy::none ? 8 : 4;
  }

  void validate() const {
    if (n_hard < 2) throw Error(Errc::invalid_argument, "N_hard must be at least 2");
    if (n_cand + 1 < n_hard) throw Error(Errc::invalid_argument, "N_cand must be at least N_hard - 1");
    if (lr < 0 || weight_decay < 0) throw Error(Errc::invalid_argument, "lr and weight decay must be non-negative");
    if (!(momentum_m >= 0.0 && momentum_m <= 1.0)) throw Error(Errc::invalid_argument, "momentum must be in [0, 1]");
    if (val_k < 2) throw Error(Errc::invalid_argument, "validation K must be at least 2");
    if (loss_mode == LossMode::symmetric && hnm != HnmStrategy::none)
      throw Error(Errc::invalid_argument, "symmetric loss needs a square score matrix; use it without hard negatives");
  }

  AdamConfig adam() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

/// The four feature banks; only those named by the adapter inputs are needed.
struct Banks {
  const FeatureBank* image = nullptr;
  const FeatureBank* scene_text = nullptr;
  const FeatureBank* brand = nullptr;
  const FeatureBank* label_text = nullptr;
};

inline const FeatureBank& require_bank(const FeatureBank* b, const char* what) {
  if (!b) throw Error(Errc::invalid_argument, std::string(what) + " bank required");
  return *b;
}

inline AdapterInput build_input(const AdapterConfig& cfg, const Banks& banks, const std::string& image_id,
                                const std::optional<std::string>& scene_text_id,
                                const std::optional<std::string>& brand_id) {
  AdapterInput in{require_bank(banks.image, "image").vec(image_id), {}};
  for (std::size_t i = 1; i < cfg.inputs.size(); ++i) {
    const bool st = cfg.inputs[i] == Branch::scene_text;
    const auto& id = st ? scene_text_id : brand_id;
    if (!id) throw Error(Errc::unknown_id, "image '" + image_id + "' has no " + (st ? "scene_text_id" : "brand_id"));
    in.extras.push_back(require_bank(st ? banks.scene_text : banks.brand, st ? "scene-text" : "brand").vec(*id));
  }
  return in;
}

inline AdapterInput build_input(const AdapterConfig& cfg, const Banks& banks, const ImageRecord& rec) {
  return build_input(cfg, banks, rec.image_id, rec.scene_text_id, rec.brand_id);
}

/// Label texts a trainer mines negatives from, with their frozen features
/// widened to 64-bit once.
struct TextPool {
  std::vector<std::string> ids;
  Mat base;

  static TextPool from(const FeatureBank& bank, std::vector<std::string> ids) {
    TextPool p;
    p.base.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(bank.dim()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto v = bank.get(ids[i]);
      for (std::size_t k = 0; k < v.size(); ++k) p.base(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
    }
    p.ids = std::move(ids);
    return p;
  }

  std::size_t size() const { return ids.size(); }
  Vec feature(std::size_t i) const { return base.row(static_cast<Eigen::Index>(i)).transpose(); }
};

template <class P>
struct TrainState {
  P params;
  double logit_scale = kLogitScaleInit;
  Adam adam;
  std::optional<MlpAdapterParams> momentum;  // momentum copy of the text head
  std::vector<Vec> memory;                   // memory-bank text features, per pool index
  std::size_t recomputations = 0;            // label-text features recomputed by the text head
  std::size_t step = 0;
};

template <class P>
constexpr bool kHasTextHead = std::is_same_v<P, MlpAdapterParams>;

/// Text feature of pool entry `c` as seen by the mining strategy.
template <class P>
Vec mining_feature(HnmStrategy strategy, const TextPool& pool, TrainState<P>& st, std::size_t c) {
  if constexpr (!kHasTextHead<P>) {
    (void)strategy;
    (void)st;
    return pool.feature(c);
  } else {
    switch (strategy) {
      case HnmStrategy::memory_bank: return st.memory.at(c);
      case HnmStrategy::momentum:
        ++st.recomputations;
        return mlp_label_forward(*st.momentum, pool.feature(c));
      default:
        ++st.recomputations;
        return mlp_label_forward(st.params, pool.feature(c));
    }
  }
}

/// N_hard - 1 pool indices. `excluded` (sorted) holds the positive image's
/// own texts. When `sampled` is given it receives the N_cand draw.
template <class P>
std::vector<std::size_t> select_hard_negatives(HnmStrategy strategy, const Vec& query, std::span<const std::size_t> excluded,
                                               const TextPool& pool, TrainState<P>& st, std::size_t n_cand,
                                               std::size_t n_hard, Rng& rng, std::vector<std::size_t>* sampled = nullptr) {
  auto cand = sample_candidates(rng, pool.size(), excluded.size(), n_cand, [&](std::size_t i) {
    return std::binary_search(excluded.begin(), excluded.end(), i);
  });
  std::unordered_map<std::size_t, double> by_index;
  by_index.reserve(cand.size());
  for (auto c : cand) by_index.emplace(c, dot(query, mining_feature(strategy, pool, st, c)));
  auto top = top_k_by_score(
      std::span<const std::size_t>(cand), n_hard - 1, [&](std::size_t c) { return by_index.at(c); },
      [&](std::size_t c) -> const std::string& { return pool.ids[c]; });
  if (sampled) *sampled = std::move(cand);
  return top;
}

/// One logged hard-negative decision.
struct NegativeEvent {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string image_id;
  std::string positive_id;
  Vec query;
  std::vector<std::string> candidates;
  std::vector<std::string> negatives;
};

struct HistoryRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global steps completed
  std::optional<double> loss;
  std::optional<double> reg_term;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<HistoryRow> history;
  Metrics initial_val;
  Metrics best_val;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  std::size_t text_recomputations = 0;
  bool early_stopped = false;
};

struct TrainHooks {
  std::function<void(const NegativeEvent&)> on_negatives;
  std::function<void(const HistoryRow&)> on_epoch;
};

namespace detail {

template <class P>
using TraceOf = std::conditional_t<kHasTextHead<P>, MlpTrace, AttentionTrace>;

template <class P>
Vec forward(const P& p, const AdapterInput& in, TraceOf<P>& tr) {
  if constexpr (kHasTextHead<P>) return mlp_forward(p, in, tr);
  else return attention_forward(p, in, tr);
}

template <class P>
void backward(const P& p, const TraceOf<P>& tr, const Vec& g, P& grads) {
  if constexpr (kHasTextHead<P>) mlp_backward(p, tr, g, grads);
  else attention_backward(p, tr, g, grads);
}

/// Current-parameter text features of one score row, with traces for backprop.
template <class P>
struct TextRow {
  std::vector<Vec> feats;
  std::vector<MlpTrace::BranchTrace> traces;
};

template <class P>
Vec current_text(const P& p, const Vec& base, MlpTrace::BranchTrace& tr) {
  if constexpr (kHasTextHead<P>) return mlp_label_forward(p, base, tr);
  else {
    (void)p;
    (void)tr;
    return base;
  }
}

template <class P>
std::unordered_map<std::string, Vec> text_features(const P& p, const FeatureBank& bank, std::span<const CandidateSet> sets) {
  std::unordered_map<std::string, Vec> out;
  MlpTrace::BranchTrace tr;
  for (const auto& cs : sets)
    for (const auto* list : {&cs.positives, &cs.negatives})
      for (const auto& id : *list)
        if (!out.count(id)) out.emplace(id, current_text(p, bank.vec(id), tr));
  return out;
}

template <class P>
Metrics validate(const P& p, const Banks& banks, std::span<const ImageRecord> images, std::span<const CandidateSet> sets) {
  std::unordered_map<std::string, const ImageRecord*> by_id;
  for (const auto& r : images) by_id.emplace(r.image_id, &r);
  auto texts = text_features(p, *banks.label_text, sets);
  TraceOf<P> tr;
  return evaluate(
      sets, [&](const std::string& id) { return forward(p, build_input(p.config, banks, *by_id.at(id)), tr); },
      [&](const std::string& id) -> const Vec& { return texts.at(id); });
}

template <class P>
std::vector<std::span<double>> tensors(P& p) {
  std::vector<std::span<double>> out;
  p.for_each_tensor([&](std::string_view, std::span<double> t) { out.push_back(t); });
  return out;
}

template <class P>
std::vector<std::span<const double>> const_tensors(const P& p) {
  std::vector<std::span<const double>> out;
  p.for_each_tensor([&](std::string_view, std::span<const double> t) { out.push_back(t); });
  return out;
}

template <class P>
void refresh_memory(const TextPool& pool, TrainState<P>& st) {
  if constexpr (kHasTextHead<P>) {
    st.memory.resize(pool.size());
    for (std::size_t c = 0; c < pool.size(); ++c) st.memory[c] = mlp_label_forward(st.params, pool.feature(c));
    st.recomputations += pool.size();
  } else {
    (void)pool;
    (void)st;
  }
}

template <class P>
void momentum_update(TrainState<P>& st, double m) {
  if constexpr (kHasTextHead<P>) {
    std::vector<std::span<double>> key;
    std::vector<std::span<const double>> query;
    st.momentum->for_each_text_tensor([&](std::string_view, std::span<double> t) { key.push_back(t); });
    st.params.for_each_text_tensor([&](std::string_view, std::span<const double> t) { query.push_back(t); });
    for (std::size_t k = 0; k < key.size(); ++k)
      for (std::size_t i = 0; i < key[k].size(); ++i) key[k][i] = m * key[k][i] + (1.0 - m) * query[k][i];
  } else {
    (void)st;
    (void)m;
  }
}

template <class P>
TrainResult train_impl(const TrainConfig& cfg, P init, const Banks& banks, const std::vector<ManifestRow>& manifest,
                       const TrainHooks& hooks) {
  cfg.validate();
  const AdapterConfig acfg = init.config;
  const FeatureBank& label_bank = require_bank(banks.label_text, "label-text");
  const FeatureBank& image_bank = require_bank(banks.image, "image");
  if (label_bank.dim() != acfg.dim || image_bank.dim() != acfg.dim)
    throw Error(Errc::dimension_mismatch, "bank dimensions do not match adapter dim " + std::to_string(acfg.dim));
  for (const FeatureBank* b : {banks.scene_text, banks.brand})
    if (b && b->dim() != acfg.dim) throw Error(Errc::dimension_mismatch, "side bank dimension mismatch");

  std::vector<ManifestRow> pairs;
  for (const auto& r : manifest)
    if (r.split == Split::train) pairs.push_back(r);
  if (pairs.empty()) throw Error(Errc::insufficient_data, "manifest has no training rows");
  const auto train_images = images_in_split(manifest, Split::train);
  const auto val_images = images_in_split(manifest, Split::val);
  if (val_images.empty()) throw Error(Errc::insufficient_data, "manifest has no validation rows");

  // Resolve every id up front so failures surface before any step.
  for (const auto& r : pairs) {
    build_input(acfg, banks, r.image_id, r.scene_text_id, r.brand_id);
    label_bank.row_of(r.label_text_id);
  }

  std::vector<std::string> pool_ids;
  std::unordered_map<std::string, std::size_t> pool_index;
  std::unordered_map<std::string, std::vector<std::size_t>> own_texts;
  for (const auto& img : train_images) {
    auto& own = own_texts[img.image_id];
    for (const auto& t : img.texts) {
      auto [it, fresh] = pool_index.emplace(t, pool_ids.size());
      if (fresh) pool_ids.push_back(t);
      own.push_back(it->second);
    }
    std::sort(own.begin(), own.end());
    own.erase(std::unique(own.begin(), own.end()), own.end());
  }
  const TextPool pool = TextPool::from(label_bank, pool_ids);

  const auto val_sets = build_candidates(EvalProtocol{ProtocolKind::k_candidate, cfg.val_k, cfg.seed}, val_images);

  TrainState<P> st;
  st.params = std::move(init);
  if constexpr (kHasTextHead<P>) {
    if (cfg.hnm == HnmStrategy::momentum) st.momentum = st.params;
    if (cfg.hnm == HnmStrategy::memory_bank) refresh_memory(pool, st);
  }

  std::vector<bool> decay_flags;
  st.params.for_each_tensor([&](std::string_view, std::span<const double>) { decay_flags.push_back(true); });
  decay_flags.push_back(false);  // logit scale
  std::unique_ptr<bool[]> decay(new bool[decay_flags.size()]);
  for (std::size_t i = 0; i < decay_flags.size(); ++i) decay[i] = decay_flags[i];

  auto snapshot = [&]() { return Checkpoint{st.params, st.logit_scale}; };

  TrainResult result;
  result.initial_val = validate(st.params, banks, val_images, val_sets);
  result.best_val = result.initial_val;
  result.best = snapshot();
  {
    HistoryRow row{0, 0, std::nullopt, std::nullopt, result.initial_val.accuracy};
    result.history.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
  }

  const std::size_t bs = cfg.effective_batch_size();
  const std::size_t refresh = cfg.bank_refresh_period ? cfg.bank_refresh_period : (pairs.size() + bs - 1) / bs;
  const bool mining = cfg.hnm != HnmStrategy::none;
  std::size_t declines = 0;

  std::vector<std::size_t> order(pairs.size());
  TraceOf<P> scratch;
  std::size_t epoch = 1;
  try {
    for (; epoch <= cfg.max_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(cfg.seed, {0x73687566ULL, epoch}));
      shuffle_rng.shuffle(std::span<std::size_t>(order));

      double loss_sum = 0.0, reg_sum = 0.0;
      std::size_t epoch_steps = 0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
        const std::size_t B = std::min(bs, order.size() - b0);
        std::vector<const ManifestRow*> batch(B);
        for (std::size_t b = 0; b < B; ++b) batch[b] = &pairs[order[b0 + b]];

        std::vector<AdapterInput> inputs(B);
        std::vector<TraceOf<P>> traces(B);
        std::vector<Vec> out(B), orig(B);
        for (std::size_t b = 0; b < B; ++b) {
          inputs[b] = build_input(acfg, banks, batch[b]->image_id, batch[b]->scene_text_id, batch[b]->brand_id);
          out[b] = forward(st.params, inputs[b], traces[b]);
          orig[b] = inputs[b].image;
        }

        if constexpr (kHasTextHead<P>) {
          if (cfg.hnm == HnmStrategy::memory_bank && st.step % refresh == 0 && st.step > 0) refresh_memory(pool, st);
        }

        // Score rows. With mining: [positive | hard negatives] per image.
        // Without: the B x B in-batch matrix over the batch's positives.
        std::vector<TextRow<P>> rows(mining ? B : 1);
        std::vector<std::vector<std::size_t>> row_pool(mining ? B : 1);
        Mat scores;
        if (mining) {
          scores.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(cfg.n_hard));
          for (std::size_t b = 0; b < B; ++b) {
            const auto& r = *batch[b];
            const std::size_t pos = pool_index.at(r.label_text_id);
            Rng rng(derive_seed(cfg.seed, {epoch, st.step, hash_string(r.image_id)}));
            std::vector<std::size_t> sampled;
            auto negs = select_hard_negatives(cfg.hnm, out[b], own_texts.at(r.image_id), pool, st, cfg.n_cand, cfg.n_hard,
                                              rng, hooks.on_negatives ? &sampled : nullptr);
            if (hooks.on_negatives) {
              NegativeEvent ev{epoch, st.step, r.image_id, r.label_text_id, out[b], {}, {}};
              for (auto c : sampled) ev.candidates.push_back(pool.ids[c]);
              for (auto c : negs) ev.negatives.push_back(pool.ids[c]);
              hooks.on_negatives(ev);
            }
            row_pool[b].push_back(pos);
            row_pool[b].insert(row_pool[b].end(), negs.begin(), negs.end());
            auto& tr = rows[b];
            tr.traces.resize(row_pool[b].size());
            for (std::size_t j = 0; j < row_pool[b].size(); ++j) {
              tr.feats.push_back(current_text(st.params, pool.feature(row_pool[b][j]), tr.traces[j]));
              scores(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = dot(out[b], tr.feats.back());
            }
            if constexpr (kHasTextHead<P>) st.recomputations += row_pool[b].size();
          }
        } else {
          auto& tr = rows[0];
          tr.traces.resize(B);
          for (std::size_t b = 0; b < B; ++b) {
            row_pool[0].push_back(pool_index.at(batch[b]->label_text_id));
            tr.feats.push_back(current_text(st.params, pool.feature(row_pool[0][b]), tr.traces[b]));
          }
          if constexpr (kHasTextHead<P>) st.recomputations += B;
          scores.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(B));
          for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j)
              scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dot(out[i], tr.feats[j]);
        }

        if (!scores.allFinite())
          throw Error(Errc::divergence, "non-finite scores at epoch " + std::to_string(epoch) + " step " +
                                            std::to_string(st.step));
        LossResult lr;
        if (mining) {
          lr = contrastive_loss(scores, st.logit_scale, LossMode::asymmetric);
        } else if (cfg.loss_mode == LossMode::symmetric) {
          lr = contrastive_loss(scores, st.logit_scale, LossMode::symmetric);
        } else {
          std::vector<Eigen::Index> diag(B);
          std::iota(diag.begin(), diag.end(), Eigen::Index{0});
          lr = row_cross_entropy(scores, st.logit_scale, std::span<const Eigen::Index>(diag));
        }
        const auto reg = anchor_regularizer(out, orig, cfg.reg_coeff);
        const double total = lr.loss + reg.term;
        if (!std::isfinite(total))
          throw Error(Errc::divergence, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                            std::to_string(st.step) + " (logit scale " + std::to_string(st.logit_scale) + ")");

        // Backward.
        P grads = st.params.zeros_like();
        for (std::size_t b = 0; b < B; ++b) {
          Vec g = reg.grad_adapted[b];
          if (mining) {
            for (std::size_t j = 0; j < rows[b].feats.size(); ++j)
              g += lr.grad_scores(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) * rows[b].feats[j];
          } else {
            for (std::size_t j = 0; j < B; ++j)
              g += lr.grad_scores(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) * rows[0].feats[j];
          }
          backward(st.params, traces[b], g, grads);
        }
        if constexpr (kHasTextHead<P>) {
          for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < rows[r].feats.size(); ++j) {
              Vec g = Vec::Zero(static_cast<Eigen::Index>(acfg.dim));
              if (mining) {
                g = lr.grad_scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) * out[r];
              } else {
                for (std::size_t i = 0; i < B; ++i)
                  g += lr.grad_scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * out[i];
              }
              mlp_label_backward(st.params, rows[r].traces[j], g, grads);
            }
          }
        }

        auto params = tensors(st.params);
        auto grad_views = const_tensors(grads);
        params.push_back(std::span<double>(&st.logit_scale, 1));
        grad_views.push_back(std::span<const double>(&lr.grad_logit_scale, 1));
        st.adam.step(params, grad_views, std::span<const bool>(decay.get(), decay_flags.size()), cfg.adam());
        st.logit_scale = std::min(st.logit_scale, kLogitScaleMax);

        if constexpr (kHasTextHead<P>) {
          if (cfg.hnm == HnmStrategy::momentum) momentum_update(st, cfg.momentum_m);
          if (cfg.hnm == HnmStrategy::memory_bank)
            for (std::size_t r = 0; r < rows.size(); ++r)
              for (std::size_t j = 0; j < rows[r].feats.size(); ++j) st.memory[row_pool[r][j]] = rows[r].feats[j];
        }

        ++st.step;
        ++epoch_steps;
        loss_sum += total;
        reg_sum += reg.term;
      }

      const Metrics val = validate(st.params, banks, val_images, val_sets);
      HistoryRow row{epoch, st.step, loss_sum / static_cast<double>(epoch_steps), reg_sum / static_cast<double>(epoch_steps),
                     val.accuracy};
      result.history.push_back(row);
      if (hooks.on_epoch) hooks.on_epoch(row);

      if (val.accuracy > result.best_val.accuracy) {
        result.best_val = val;
        result.best = snapshot();
        result.best_epoch = epoch;
        declines = 0;
      } else if (val.accuracy < result.best_val.accuracy) {
        ++declines;
        if (cfg.patience && declines >= cfg.patience) {
          result.early_stopped = true;
          break;
        }
      }
    }
  } catch (const Error& e) {
    // Non-finite activations or gradients mid-run mean the run blew up.
    if (e.code() != Errc::non_finite) throw;
    throw Error(Errc::divergence, "diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(st.step) +
                                      ": " + e.what());
  }
  result.last = snapshot();
  result.steps = st.step;
  result.text_recomputations = st.recomputations;
  return result;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const AdapterParams& init, const Banks& banks,
                         const std::vector<ManifestRow>& manifest, const TrainHooks& hooks = {}) {
  return std::visit([&](const auto& p) { return detail::train_impl(cfg, p, banks, manifest, hooks); }, init);
}

/// Adapted image features for every image of a split, in split order.
inline std::unordered_map<std::string, Vec> adapted_features(const AdapterParams& p, const Banks& banks,
                                                             std::span<const ImageRecord> images) {
  std::unordered_map<std::string, Vec> out;
  const auto& cfg = config_of(p);
  for (const auto& img : images) out.emplace(img.image_id, adapt(p, build_input(cfg, banks, img)));
  return out;
}

/// Retrieval metrics for an adapter; `std::nullopt` evaluates the zero-shot
/// baseline n(f_I(x)) . f_T(y).
inline Metrics evaluate_adapter(const std::optional<AdapterParams>& p, const Banks& banks,
                                std::span<const ImageRecord> images, std::span<const CandidateSet> sets,
                                std::vector<ImageRanks>* per_image = nullptr) {
  const FeatureBank& label_bank = require_bank(banks.label_text, "label-text");
  const FeatureBank& image_bank = require_bank(banks.image, "image");
  std::unordered_map<std::string, const ImageRecord*> by_id;
  for (const auto& r : images) by_id.emplace(r.image_id, &r);
  std::unordered_map<std::string, Vec> texts;
  for (const auto& cs : sets)
    for (const auto* list : {&cs.positives, &cs.negatives})
      for (const auto& id : *list)
        if (!texts.count(id)) texts.emplace(id, p ? adapt_text(*p, label_bank.vec(id)) : label_bank.vec(id));
  auto image_feature = [&](const std::string& id) -> Vec {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(Errc::unknown_id, "image '" + id + "' not in evaluation split");
    if (!p) return l2_normalized(image_bank.vec(id));
    return adapt(*p, build_input(config_of(*p), banks, *it->second));
  };
  return evaluate(sets, image_feature, [&](const std::string& id) -> const Vec& { return texts.at(id); }, per_image);
}

}  // namespace kafa
