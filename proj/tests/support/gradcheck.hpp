#pragma once

// Central finite-difference checks for the adapters, shared by the unit and
// acceptance suites.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "kafa/adapter.hpp"
#include "kafa/rng.hpp"

namespace kafa::check {

struct GradCheck {
  double max_rel = 0.0;
  std::size_t entries = 0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `loss(params)`.
/// The key bias has zero true gradient (softmax shift); its worst entries sit
/// near 9e-5 at this step from cancellation noise.
template <class P, class Loss>
GradCheck compare(P params, const P& analytic, Loss&& loss, double step = 1e-5, double floor = 1e-6) {
  std::vector<std::span<const double>> an;
  analytic.for_each_tensor([&](std::string_view, std::span<const double> t) { an.push_back(t); });
  std::vector<std::pair<std::string, std::span<double>>> ps;
  params.for_each_tensor([&](std::string_view name, std::span<double> t) { ps.emplace_back(std::string(name), t); });
  GradCheck r;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto t = ps[k].second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss(params);
      t[i] = orig - step;
      const double down = loss(params);
      t[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double rel = relative_error(an[k][i], numeric, floor);
      ++r.entries;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = ps[k].first + "[" + std::to_string(i) + "] analytic " + std::to_string(an[k][i]) + " numeric " +
                  std::to_string(numeric);
      }
    }
  }
  return r;
}

inline Vec random_unit(Rng& rng, std::size_t d) {
  Vec v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return l2_normalized(v);
}

inline Vec random_vec(Rng& rng, std::size_t d) {
  Vec v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

template <class P>
void randomize(P& p, Rng& rng, double scale) {
  p.for_each_tensor([&](std::string_view, std::span<double> t) {
    for (auto& x : t) x = rng.uniform(-scale, scale);
  });
}

/// Attention adapter, loss = sum_b c_b . out_b over a random batch.
inline GradCheck attention_gradcheck(std::size_t d, std::size_t heads, std::size_t n_input, std::uint64_t seed,
                                     bool qkv_bias = true) {
  static const std::vector<Branch> order{Branch::image, Branch::scene_text, Branch::brand};
  AdapterConfig cfg;
  cfg.dim = d;
  cfg.heads = heads;
  cfg.inputs.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_input));
  cfg.qkv_bias = qkv_bias;
  cfg.seed = seed;
  auto p = init_attention(cfg);
  Rng rng(seed);
  randomize(p, rng, 0.6);
  std::vector<AdapterInput> batch(3);
  std::vector<Vec> up(3);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    batch[b].image = random_unit(rng, d);
    for (std::size_t i = 1; i < n_input; ++i) batch[b].extras.push_back(random_unit(rng, d));
    up[b] = random_vec(rng, d);
  }
  auto loss = [&](const AttentionAdapterParams& q) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) s += dot(up[b], attention_forward(q, batch[b]));
    return s;
  };
  return compare(p, attention_backward(p, batch, up), loss);
}

/// MLP adapter including the label-text head.
inline GradCheck mlp_gradcheck(std::size_t d, std::size_t n_input, std::uint64_t seed) {
  static const std::vector<Branch> order{Branch::image, Branch::scene_text, Branch::brand};
  AdapterConfig cfg;
  cfg.kind = AdapterKind::mlp;
  cfg.dim = d;
  cfg.inputs.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_input));
  cfg.seed = seed;
  auto p = init_mlp(cfg);
  Rng rng(seed);
  randomize(p, rng, 0.5);
  std::vector<AdapterInput> batch(3);
  std::vector<Vec> up(3), labels(2), label_up(2);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    batch[b].image = random_unit(rng, d);
    for (std::size_t i = 1; i < n_input; ++i) batch[b].extras.push_back(random_unit(rng, d));
    up[b] = random_vec(rng, d);
  }
  for (std::size_t j = 0; j < labels.size(); ++j) {
    labels[j] = random_unit(rng, d);
    label_up[j] = random_vec(rng, d);
  }
  auto loss = [&](const MlpAdapterParams& q) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) s += dot(up[b], mlp_forward(q, batch[b]));
    for (std::size_t j = 0; j < labels.size(); ++j) s += dot(label_up[j], mlp_label_forward(q, labels[j]));
    return s;
  };
  auto grads = mlp_backward(p, batch, up);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    MlpTrace::BranchTrace tr;
    mlp_label_forward(p, labels[j], tr);
    mlp_label_backward(p, tr, label_up[j], grads);
  }
  return compare(p, grads, loss);
}

}  // namespace kafa::check
