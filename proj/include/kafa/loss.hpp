// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kafa/error.hpp"
#include "kafa/linalg.hpp"

namespace kafa {

enum class LossMode { symmetric, asymmetric };

struct LossResult {
  double loss = 0.0;
  Mat grad_scores;  // d(loss)/d(scores), same shape as scores
  double grad_logit_scale = 0.0;
};

/// Mean over rows of CE(exp(logit_scale) * row, target). `targets` defaults
/// to column 0 for every row.
inline LossResult row_cross_entropy(const Mat& scores, double logit_scale,
                                    std::optional<std::span<const Eigen::Index>> targets = std::nullopt) {
  const Eigen::Index rows = scores.rows(), cols = scores.cols();
  if (rows == 0 || cols == 0) throw Error(Errc::shape_mismatch, "empty score matrix");
  if (!scores.allFinite()) throw Error(Errc::non_finite, "scores contain non-finite values");
  if (targets && static_cast<Eigen::Index>(targets->size()) != rows)
    throw Error(Errc::shape_mismatch, "one target per row required");
  const double scale = std::exp(logit_scale);
  LossResult r;
  r.grad_scores = Mat::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::Index t = targets ? (*targets)[static_cast<std::size_t>(i)] : 0;
    if (t < 0 || t >= cols) throw Error(Errc::shape_mismatch, "target column out of range");
    const double mx = scale * scores.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < cols; ++j) z += std::exp(scale * scores(i, j) - mx);
    const double lse = mx + std::log(z);
    r.loss += lse - scale * scores(i, t);
    // d/dlogit_j = p_j - [j == t]; logit_j = scale * s_j
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double p = std::exp(scale * scores(i, j) - lse);
      const double g = p - (j == t ? 1.0 : 0.0);
      r.grad_scores(i, j) = g * scale;
      r.grad_logit_scale += g * scale * scores(i, j);
    }
  }
  const double inv = 1.0 / static_cast<double>(rows);
  r.loss *= inv;
  r.grad_scores *= inv;
  r.grad_logit_scale *= inv;
  return r;
}

/// asymmetric: rows are [positive | negatives], target column 0.
/// symmetric: square in-batch matrix, diagonal targets, mean of the row-wise
/// and column-wise losses.
inline LossResult contrastive_loss(const Mat& scores, double logit_scale, LossMode mode) {
  if (mode == LossMode::asymmetric) return row_cross_entropy(scores, logit_scale);
  if (scores.rows() != scores.cols())
    throw Error(Errc::shape_mismatch, "symmetric loss requires a square score matrix, got " +
                                          std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()));
  std::vector<Eigen::Index> diag(static_cast<std::size_t>(scores.rows()));
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<Eigen::Index>(i);
  const Mat transposed = scores.transpose();
  auto by_row = row_cross_entropy(scores, logit_scale, diag);
  auto by_col = row_cross_entropy(transposed, logit_scale, diag);
  LossResult r;
  r.loss = 0.5 * (by_row.loss + by_col.loss);
  r.grad_scores = 0.5 * (by_row.grad_scores + Mat(by_col.grad_scores.transpose()));
  r.grad_logit_scale = 0.5 * (by_row.grad_logit_scale + by_col.grad_logit_scale);
  return r;
}

struct RegularizerResult {
  double term = 0.0;
  std::vector<Vec> grad_adapted;
};

/// -coeff * mean_i(adapted_i . original_i)
inline RegularizerResult anchor_regularizer(std::span<const Vec> adapted, std::span<const Vec> original, double coeff) {
  if (adapted.size() != original.size() || adapted.empty())
    throw Error(Errc::shape_mismatch, "regularizer needs matching non-empty batches");
  const double inv = 1.0 / static_cast<double>(adapted.size());
  RegularizerResult r;
  r.grad_adapted.reserve(adapted.size());
  for (std::size_t i = 0; i < adapted.size(); ++i) {
    if (adapted[i].size() != original[i].size()) throw Error(Errc::shape_mismatch, "regularizer row dims differ");
    r.term -= coeff * inv * dot(adapted[i], original[i]);
    r.grad_adapted.push_back(-coeff * inv * original[i]);
  }
  return r;
}

}  // namespace kafa
