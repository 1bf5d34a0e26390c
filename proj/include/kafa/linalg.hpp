// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "kafa/error.hpp"

namespace kafa {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Vec to_vec(std::span<const float> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

/// Sequential dot product; summation order is fixed so results are
/// reproducible against hand-written loop oracles.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const Vec& a, const Vec& b) {
  return dot(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
             std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

/// Mixed-precision variant for float32 bank rows.
inline double dot(std::span<const double> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * static_cast<double>(b[i]);
  return s;
}

/// Contiguous view over an Eigen vector or matrix.
template <class T>
std::span<double> flat(T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}
template <class T>
std::span<const double> flat(const T& t) {
  return {t.data(), static_cast<std::size_t>(t.size())};
}

/// n(.) - L2 normalization along the feature dimension.
inline Vec l2_normalized(const Vec& z) {
  const double norm = std::sqrt(dot(z, z));
  if (!std::isfinite(norm) || norm == 0.0)
    throw Error(Errc::non_finite, "cannot normalize vector with norm " + std::to_string(norm));
  return z / norm;
}

/// Backward of out = z / |z| given upstream gradient on out.
inline Vec l2_normalize_backward(const Vec& out, double z_norm, const Vec& grad_out) {
  return (grad_out - out * dot(out, grad_out)) / z_norm;
}
}  // namespace kafa
