// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kafa/error.hpp"

namespace kafa {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with bias correction. Weight decay enters as an L2 term added to
/// the gradient (torch.optim.Adam semantics), only for tensors flagged in
/// `decay`.
class Adam {
 public:
  Adam() = default;

  std::uint64_t step_count() const { return t_; }

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
            std::span<const bool> decay, const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != decay.size())
      throw Error(Errc::shape_mismatch, "adam: params/grads/decay counts differ");
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].size() != grads[k].size()) throw Error(Errc::shape_mismatch, "adam: tensor " + std::to_string(k));
      for (double g : grads[k])
        if (!std::isfinite(g)) throw Error(Errc::non_finite, "adam: non-finite gradient in tensor " + std::to_string(k));
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    } else if (m_.size() != params.size()) {
      throw Error(Errc::shape_mismatch, "adam: moment shapes do not mirror params");
    }

    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k];
      auto g = grads[k];
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != p.size()) throw Error(Errc::shape_mismatch, "adam: moment shapes do not mirror params");
      const double wd = decay[k] ? cfg.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] + wd * p[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    }
  }

 private:
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace kafa
