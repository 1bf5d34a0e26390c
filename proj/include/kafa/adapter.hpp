// SPDX-License-Identifier: Apache-2.0
#pragma once

// Feature adapters over frozen embeddings.
//
// Attention adapter:  out = n(image + MHA([s_0, s_1, ...])[0]),  s_i = input_i + pos_i
// MLP adapter:        branch_I = n(f_I + g_I(f_I)), branch_T = n(f_T + g_T(f_T)),
//                     out = n(h(cat[branches..., extras...]))
//
// Both come with exact reverse-mode gradients. Parameters are 64-bit.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/linalg.hpp"
#include "kafa/rng.hpp"

namespace kafa {

enum class Branch : std::uint8_t { image, scene_text, brand };
enum class AdapterKind : std::uint8_t { attention, mlp };

inline std::string_view kind_name(AdapterKind k) { return k == AdapterKind::attention ? "attention" : "mlp"; }

inline AdapterKind parse_kind(std::string_view s) {
  if (s == "attention") return AdapterKind::attention;
  if (s == "mlp") return AdapterKind::mlp;
  throw Error(Errc::invalid_argument, "unknown adapter kind '" + std::string(s) + "'");
}

/// Input-branch spec in the "I+ST+K" notation.
inline std::vector<Branch> parse_inputs(std::string_view s) {
  if (s == "I") return {Branch::image};
  if (s == "I+ST") return {Branch::image, Branch::scene_text};
  if (s == "I+K") return {Branch::image, Branch::brand};
  if (s == "I+ST+K") return {Branch::image, Branch::scene_text, Branch::brand};
  throw Error(Errc::invalid_argument, "inputs must be one of I, I+ST, I+K, I+ST+K (got '" + std::string(s) + "')");
}

inline std::string inputs_name(const std::vector<Branch>& inputs) {
  std::string out;
  for (Branch b : inputs) {
    if (!out.empty()) out += '+';
    out += b == Branch::image ? "I" : b == Branch::scene_text ? "ST" : "K";
  }
  return out;
}

struct AdapterConfig {
  AdapterKind kind = AdapterKind::attention;
  std::size_t dim = 0;
  std::size_t heads = 8;
  std::vector<Branch> inputs{Branch::image, Branch::scene_text, Branch::brand};
  bool qkv_bias = true;
  std::uint64_t seed = 0;

  std::size_t n_input() const { return inputs.size(); }

  void validate() const {
    if (dim == 0) throw Error(Errc::invalid_argument, "adapter dim must be positive");
    if (inputs.empty() || inputs.front() != Branch::image)
      throw Error(Errc::invalid_argument, "adapter inputs must start with the image branch");
    for (std::size_t i = 1; i < inputs.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (inputs[i] == inputs[j]) throw Error(Errc::invalid_argument, "repeated adapter input branch");
    if (kind == AdapterKind::attention && (heads == 0 || dim % heads != 0))
      throw Error(Errc::invalid_argument,
                  "dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

/// One image and the extra branch features, ordered as config.inputs[1..].
struct AdapterInput {
  Vec image;
  std::vector<Vec> extras;
};

inline void check_input(const AdapterConfig& cfg, const AdapterInput& in) {
  if (in.extras.size() + 1 != cfg.n_input())
    throw Error(Errc::shape_mismatch, "adapter expects " + std::to_string(cfg.n_input()) + " inputs, got " +
                                          std::to_string(in.extras.size() + 1));
  if (static_cast<std::size_t>(in.image.size()) != cfg.dim)
    throw Error(Errc::dimension_mismatch, "image feature dim " + std::to_string(in.image.size()));
  for (const auto& e : in.extras)
    if (static_cast<std::size_t>(e.size()) != cfg.dim)
      throw Error(Errc::dimension_mismatch, "extra feature dim " + std::to_string(e.size()));
}

// ---------------------------------------------------------------------------
// Attention adapter

struct AttentionAdapterParams {
  AdapterConfig config;
  Mat pos_emb;  // n_input x d
  Mat w_q, w_k, w_v, w_o;  // d x d, applied as y = W x + b
  Vec b_q, b_k, b_v, b_o;

  /// Visits every trainable tensor as a flat span, in serialization order.
  template <class F>
  void for_each_tensor(F&& f) {
    each(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    each(*this, f);
  }

  AttentionAdapterParams zeros_like() const {
    AttentionAdapterParams z = *this;
    z.for_each_tensor([](std::string_view, auto t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
  }

 private:
  template <class Self, class F>
  static void each(Self& s, F& f) {
    f("pos_emb", flat(s.pos_emb));
    f("w_q", flat(s.w_q));
    if (s.config.qkv_bias) f("b_q", flat(s.b_q));
    f("w_k", flat(s.w_k));
    if (s.config.qkv_bias) f("b_k", flat(s.b_k));
    f("w_v", flat(s.w_v));
    if (s.config.qkv_bias) f("b_v", flat(s.b_v));
    f("w_o", flat(s.w_o));
    f("b_o", flat(s.b_o));
  }
};

/// Intermediates kept for the backward pass. Only output position 0 is
/// consumed, so only query row 0 is formed.
struct AttentionTrace {
  Mat s;        // n x d, inputs + positional embeddings
  Vec q0;       // d
  Mat k, v;     // n x d
  Mat weights;  // heads x n, softmax rows
  Vec o;        // d, concatenated head outputs
  Vec out;      // unit output
  double z_norm = 0.0;
};

inline AttentionAdapterParams init_attention(const AdapterConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto n = static_cast<Eigen::Index>(cfg.n_input());
  AttentionAdapterParams p;
  p.config = cfg;
  p.pos_emb = Mat::Zero(n, d);
  Rng rng(derive_seed(cfg.seed, {0x61747465ULL}));
  // Xavier-uniform over the packed (3d x d) in-projection, as torch does.
  const double bound = std::sqrt(6.0 / static_cast<double>(4 * cfg.dim));
  auto uniform = [&](Mat& w) {
    w.resize(d, d);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  };
  uniform(p.w_q);
  uniform(p.w_k);
  uniform(p.w_v);
  p.w_o = Mat::Zero(d, d);
  p.b_q = p.b_k = p.b_v = p.b_o = Vec::Zero(d);
  return p;
}

inline Vec attention_forward(const AttentionAdapterParams& p, const AdapterInput& in, AttentionTrace& tr) {
  const auto& cfg = p.config;
  check_input(cfg, in);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto n = static_cast<Eigen::Index>(cfg.n_input());
  const auto heads = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  tr.s.resize(n, d);
  tr.s.row(0) = in.image.transpose() + p.pos_emb.row(0);
  for (Eigen::Index i = 1; i < n; ++i) tr.s.row(i) = in.extras[static_cast<std::size_t>(i - 1)].transpose() + p.pos_emb.row(i);

  tr.q0 = p.w_q * tr.s.row(0).transpose() + p.b_q;
  tr.k = tr.s * p.w_k.transpose();
  tr.v = tr.s * p.w_v.transpose();
  tr.k.rowwise() += p.b_k.transpose();
  tr.v.rowwise() += p.b_v.transpose();

  tr.weights.resize(heads, n);
  tr.o = Vec::Zero(d);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    Eigen::VectorXd logits(n);
    for (Eigen::Index j = 0; j < n; ++j) logits[j] = scale * tr.q0.segment(c0, dh).dot(tr.k.row(j).segment(c0, dh));
    const double mx = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - mx).exp();
    w /= w.sum();
    tr.weights.row(h) = w.transpose();
    for (Eigen::Index j = 0; j < n; ++j) tr.o.segment(c0, dh) += w[j] * tr.v.row(j).segment(c0, dh).transpose();
  }

  const Vec z = in.image + (p.w_o * tr.o + p.b_o);
  if (!z.allFinite()) throw Error(Errc::non_finite, "attention adapter produced a non-finite activation");
  tr.z_norm = std::sqrt(dot(z, z));
  tr.out = l2_normalized(z);
  return tr.out;
}

inline Vec attention_forward(const AttentionAdapterParams& p, const AdapterInput& in) {
  AttentionTrace tr;
  return attention_forward(p, in, tr);
}

inline std::vector<Vec> attention_forward(const AttentionAdapterParams& p, std::span<const AdapterInput> batch) {
  if (batch.empty()) throw Error(Errc::invalid_argument, "empty batch");
  std::vector<Vec> out;
  out.reserve(batch.size());
  AttentionTrace tr;
  for (const auto& in : batch) out.push_back(attention_forward(p, in, tr));
  return out;
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(out).
inline void attention_backward(const AttentionAdapterParams& p, const AttentionTrace& tr, const Vec& grad_out,
                               AttentionAdapterParams& grads) {
  const auto d = static_cast<Eigen::Index>(p.config.dim);
  const auto n = static_cast<Eigen::Index>(p.config.n_input());
  const auto heads = static_cast<Eigen::Index>(p.config.heads);
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (grad_out.size() != d) throw Error(Errc::shape_mismatch, "upstream gradient dim " + std::to_string(grad_out.size()));

  const Vec g_z = l2_normalize_backward(tr.out, tr.z_norm, grad_out);
  grads.w_o.noalias() += g_z * tr.o.transpose();
  grads.b_o += g_z;
  const Vec g_o = p.w_o.transpose() * g_z;

  Vec g_q0 = Vec::Zero(d);
  Mat g_k = Mat::Zero(n, d);
  Mat g_v = Mat::Zero(n, d);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const auto g_oh = g_o.segment(c0, dh);
    Eigen::VectorXd g_w(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = tr.weights(h, j);
      g_v.row(j).segment(c0, dh) += w * g_oh.transpose();
      g_w[j] = g_oh.dot(tr.v.row(j).segment(c0, dh));
    }
    const double mean = tr.weights.row(h).dot(g_w.transpose());
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g_logit = tr.weights(h, j) * (g_w[j] - mean) * scale;
      g_q0.segment(c0, dh) += g_logit * tr.k.row(j).segment(c0, dh).transpose();
      g_k.row(j).segment(c0, dh) += g_logit * tr.q0.segment(c0, dh).transpose();
    }
  }

  grads.w_q.noalias() += g_q0 * tr.s.row(0);
  grads.w_k.noalias() += g_k.transpose() * tr.s;
  grads.w_v.noalias() += g_v.transpose() * tr.s;
  if (p.config.qkv_bias) {
    grads.b_q += g_q0;
    grads.b_k += g_k.colwise().sum().transpose();
    grads.b_v += g_v.colwise().sum().transpose();
  }
  Mat g_s = g_k * p.w_k + g_v * p.w_v;
  g_s.row(0) += (p.w_q.transpose() * g_q0).transpose();
  grads.pos_emb += g_s;
}

/// Batch gradient: sum over samples of the per-sample gradients.
inline AttentionAdapterParams attention_backward(const AttentionAdapterParams& p, std::span<const AdapterInput> batch,
                                                 std::span<const Vec> upstream) {
  if (batch.size() != upstream.size())
    throw Error(Errc::shape_mismatch, "batch has " + std::to_string(batch.size()) + " samples, upstream " +
                                          std::to_string(upstream.size()));
  auto grads = p.zeros_like();
  AttentionTrace tr;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    attention_forward(p, batch[i], tr);
    attention_backward(p, tr, upstream[i], grads);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// MLP adapter

/// y = W2 relu(W1 x + b1) + b2
struct TwoLayerMlp {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  struct Trace {
    Vec x, pre, hidden;
  };

  Vec forward(const Vec& x, Trace& tr) const {
    tr.x = x;
    tr.pre = w1 * x + b1;
    tr.hidden = tr.pre.cwiseMax(0.0);
    return w2 * tr.hidden + b2;
  }

  /// Accumulates parameter gradients; returns d(loss)/dx.
  Vec backward(const Trace& tr, const Vec& g_y, TwoLayerMlp& grads) const {
    grads.w2.noalias() += g_y * tr.hidden.transpose();
    grads.b2 += g_y;
    Vec g_h = w2.transpose() * g_y;
    for (Eigen::Index i = 0; i < g_h.size(); ++i)
      if (tr.pre[i] <= 0.0) g_h[i] = 0.0;
    grads.w1.noalias() += g_h * tr.x.transpose();
    grads.b1 += g_h;
    return w1.transpose() * g_h;
  }

  template <class F>
  void each(std::string_view prefix, F& f) {
    std::string p(prefix);
    f(p + ".w1", flat(w1));
    f(p + ".b1", flat(b1));
    f(p + ".w2", flat(w2));
    f(p + ".b2", flat(b2));
  }
  template <class F>
  void each(std::string_view prefix, F& f) const {
    std::string p(prefix);
    f(p + ".w1", flat(w1));
    f(p + ".b1", flat(b1));
    f(p + ".w2", flat(w2));
    f(p + ".b2", flat(b2));
  }
};

struct MlpAdapterParams {
  AdapterConfig config;
  TwoLayerMlp g_image;
  TwoLayerMlp g_text;  // shared by the scene-text branch and the label-text head
  TwoLayerMlp fuse;

  template <class F>
  void for_each_tensor(F&& f) {
    g_image.each("g_image", f);
    g_text.each("g_text", f);
    fuse.each("fuse", f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    g_image.each("g_image", f);
    g_text.each("g_text", f);
    fuse.each("fuse", f);
  }

  /// Label-text head tensors only (g_text), in the same order.
  template <class F>
  void for_each_text_tensor(F&& f) {
    g_text.each("g_text", f);
  }
  template <class F>
  void for_each_text_tensor(F&& f) const {
    g_text.each("g_text", f);
  }

  MlpAdapterParams zeros_like() const {
    MlpAdapterParams z = *this;
    z.for_each_tensor([](std::string_view, auto t) { std::fill(t.begin(), t.end(), 0.0); });
    return z;
  }
};

struct MlpTrace {
  struct BranchTrace {
    TwoLayerMlp::Trace mlp;
    Vec out;
    double z_norm = 0.0;
  };
  std::vector<BranchTrace> branches;  // per input slot; unused for pass-through slots
  TwoLayerMlp::Trace fuse;
  Vec out;
  double z_norm = 0.0;
};

inline MlpAdapterParams init_mlp(const AdapterConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto cat = static_cast<Eigen::Index>(cfg.dim * cfg.n_input());
  Rng rng(derive_seed(cfg.seed, {0x6d6c70ULL}));
  auto layer = [&](Eigen::Index out, Eigen::Index in, Mat& w, Vec& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w.resize(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    b.resize(out);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
  };
  MlpAdapterParams p;
  p.config = cfg;
  for (TwoLayerMlp* m : {&p.g_image, &p.g_text}) {
    layer(d, d, m->w1, m->b1);
    layer(d, d, m->w2, m->b2);
  }
  layer(d, cat, p.fuse.w1, p.fuse.b1);
  layer(d, d, p.fuse.w2, p.fuse.b2);
  return p;
}

inline Vec residual_branch(const TwoLayerMlp& g, const Vec& x, MlpTrace::BranchTrace& tr) {
  const Vec z = x + g.forward(x, tr.mlp);
  tr.z_norm = std::sqrt(dot(z, z));
  tr.out = l2_normalized(z);
  return tr.out;
}

inline Vec residual_branch_backward(const TwoLayerMlp& g, const MlpTrace::BranchTrace& tr, const Vec& grad_out,
                                    TwoLayerMlp& grads) {
  const Vec g_z = l2_normalize_backward(tr.out, tr.z_norm, grad_out);
  return g_z + g.backward(tr.mlp, g_z, grads);
}

inline Vec mlp_forward(const MlpAdapterParams& p, const AdapterInput& in, MlpTrace& tr) {
  const auto& cfg = p.config;
  check_input(cfg, in);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  tr.branches.resize(cfg.n_input());
  Vec cat(d * static_cast<Eigen::Index>(cfg.n_input()));
  for (std::size_t i = 0; i < cfg.n_input(); ++i) {
    const Vec& x = i == 0 ? in.image : in.extras[i - 1];
    Vec b;
    switch (cfg.inputs[i]) {
      case Branch::image: b = residual_branch(p.g_image, x, tr.branches[i]); break;
      case Branch::scene_text: b = residual_branch(p.g_text, x, tr.branches[i]); break;
      case Branch::brand: b = x; break;
    }
    cat.segment(static_cast<Eigen::Index>(i) * d, d) = b;
  }
  const Vec z = p.fuse.forward(cat, tr.fuse);
  if (!z.allFinite()) throw Error(Errc::non_finite, "mlp adapter produced a non-finite activation");
  tr.z_norm = std::sqrt(dot(z, z));
  tr.out = l2_normalized(z);
  return tr.out;
}

inline Vec mlp_forward(const MlpAdapterParams& p, const AdapterInput& in) {
  MlpTrace tr;
  return mlp_forward(p, in, tr);
}

/// Spelled-out form: image, scene text, then any remaining extras.
inline Vec mlp_forward(const MlpAdapterParams& p, const Vec& image_feat, const Vec& scene_text_feat,
                       std::span<const Vec> extra_feats) {
  AdapterInput in{image_feat, {scene_text_feat}};
  in.extras.insert(in.extras.end(), extra_feats.begin(), extra_feats.end());
  return mlp_forward(p, in);
}

inline void mlp_backward(const MlpAdapterParams& p, const MlpTrace& tr, const Vec& grad_out, MlpAdapterParams& grads) {
  const auto d = static_cast<Eigen::Index>(p.config.dim);
  if (grad_out.size() != d) throw Error(Errc::shape_mismatch, "upstream gradient dim " + std::to_string(grad_out.size()));
  const Vec g_z = l2_normalize_backward(tr.out, tr.z_norm, grad_out);
  const Vec g_cat = p.fuse.backward(tr.fuse, g_z, grads.fuse);
  for (std::size_t i = 0; i < p.config.n_input(); ++i) {
    const Vec g_b = g_cat.segment(static_cast<Eigen::Index>(i) * d, d);
    switch (p.config.inputs[i]) {
      case Branch::image: residual_branch_backward(p.g_image, tr.branches[i], g_b, grads.g_image); break;
      case Branch::scene_text: residual_branch_backward(p.g_text, tr.branches[i], g_b, grads.g_text); break;
      case Branch::brand: break;
    }
  }
}

inline MlpAdapterParams mlp_backward(const MlpAdapterParams& p, std::span<const AdapterInput> batch,
                                     std::span<const Vec> upstream) {
  if (batch.size() != upstream.size()) throw Error(Errc::shape_mismatch, "batch/upstream size mismatch");
  auto grads = p.zeros_like();
  MlpTrace tr;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    mlp_forward(p, batch[i], tr);
    mlp_backward(p, tr, upstream[i], grads);
  }
  return grads;
}

/// Label-text head: n(f_T(y) + g_T(f_T(y))).
inline Vec mlp_label_forward(const MlpAdapterParams& p, const Vec& label_feat, MlpTrace::BranchTrace& tr) {
  if (static_cast<std::size_t>(label_feat.size()) != p.config.dim)
    throw Error(Errc::dimension_mismatch, "label feature dim " + std::to_string(label_feat.size()));
  return residual_branch(p.g_text, label_feat, tr);
}

inline Vec mlp_label_forward(const MlpAdapterParams& p, const Vec& label_feat) {
  MlpTrace::BranchTrace tr;
  return mlp_label_forward(p, label_feat, tr);
}

inline void mlp_label_backward(const MlpAdapterParams& p, const MlpTrace::BranchTrace& tr, const Vec& grad_out,
                               MlpAdapterParams& grads) {
  residual_branch_backward(p.g_text, tr, grad_out, grads.g_text);
}

// ---------------------------------------------------------------------------
// Kind-erased handle

using AdapterParams = std::variant<AttentionAdapterParams, MlpAdapterParams>;

inline AdapterParams init_params(const AdapterConfig& cfg) {
  if (cfg.kind == AdapterKind::attention) return init_attention(cfg);
  return init_mlp(cfg);
}

inline const AdapterConfig& config_of(const AdapterParams& p) {
  return std::visit([](const auto& x) -> const AdapterConfig& { return x.config; }, p);
}

inline Vec adapt(const AdapterParams& p, const AdapterInput& in) {
  return std::visit(
      [&](const auto& x) -> Vec {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, AttentionAdapterParams>) return attention_forward(x, in);
        else return mlp_forward(x, in);
      },
      p);
}

/// Text-side features: identity for the attention adapter, the shared g_T
/// head for the MLP adapter.
inline Vec adapt_text(const AdapterParams& p, const Vec& label_feat) {
  if (const auto* m = std::get_if<MlpAdapterParams>(&p)) return mlp_label_forward(*m, label_feat);
  return label_feat;
}

inline bool has_text_adapter(const AdapterParams& p) { return std::holds_alternative<MlpAdapterParams>(p); }

inline bool params_equal(const AdapterParams& a, const AdapterParams& b) {
  if (a.index() != b.index() || !(config_of(a) == config_of(b))) return false;
  std::vector<double> fa, fb;
  auto collect = [](std::vector<double>& out) {
    return [&out](std::string_view, auto t) { out.insert(out.end(), t.begin(), t.end()); };
  };
  std::visit([&](const auto& x) { x.for_each_tensor(collect(fa)); }, a);
  std::visit([&](const auto& x) { x.for_each_tensor(collect(fb)); }, b);
  return fa == fb;
}

}  // namespace kafa
