#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>

namespace muse::nn {

/// Exact (erf) GELU.
template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Binary cross-entropy on a logit, numerically stable.
template <class T>
T bce_with_logits(T logit, T target) {
  return std::max(logit, T(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

/// Row-wise softmax in place.
template <class Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace muse::nn
