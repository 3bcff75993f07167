#pragma once

#include "muse/adamw.hpp"
#include "muse/error.hpp"
#include "muse/fit_config.hpp"
#include "muse/history.hpp"
#include "muse/nn_ops.hpp"
#include "muse/random.hpp"
#include "muse/tabular.hpp"

#include <Eigen/Core>

#include <optional>

namespace muse {

/// One-hidden-layer GELU network producing a single logit. Inputs are
/// standardized with the training-set mean/scale stored alongside.
template <class T>
struct MlpParams {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Matrix w1;  // hidden x inputs
  Vector b1;
  Vector w2;  // hidden
  Vector b2;  // size 1
  Vector input_mean;
  Vector input_scale;

  Eigen::Index inputs() const { return w1.cols(); }
  Eigen::Index hidden() const { return w1.rows(); }

  template <class F>
  void for_each_tensor(F&& f) {
    f("w1", w1);
    f("b1", b1);
    f("w2", w2);
    f("b2", b2);
  }

  /// Zeroed copy with the same shapes, for gradient accumulation.
  MlpParams zeros_like() const {
    MlpParams z;
    z.w1 = Matrix::Zero(w1.rows(), w1.cols());
    z.b1 = Vector::Zero(b1.size());
    z.w2 = Vector::Zero(w2.size());
    z.b2 = Vector::Zero(1);
    z.input_mean = input_mean;
    z.input_scale = input_scale;
    return z;
  }

  template <class U>
  MlpParams<U> cast() const {
    return {w1.template cast<U>(), b1.template cast<U>(), w2.template cast<U>(),
            b2.template cast<U>(), input_mean.template cast<U>(), input_scale.template cast<U>()};
  }

  bool operator==(const MlpParams&) const = default;
};

/// Uniform fan-in initialization; identity standardization.
template <class T>
MlpParams<T> init_mlp(Eigen::Index inputs, Eigen::Index hidden, std::uint64_t seed) {
  Rng rng(seed);
  auto uniform = [&](double bound) {
    return static_cast<T>(std::uniform_real_distribution<double>(-bound, bound)(rng));
  };
  MlpParams<T> p;
  const double b_in = 1.0 / std::sqrt(static_cast<double>(inputs));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.w1.resize(hidden, inputs);
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = uniform(b_in);
  p.b1.resize(hidden);
  for (auto& v : p.b1) v = uniform(b_in);
  p.w2.resize(hidden);
  for (auto& v : p.w2) v = uniform(b_hid);
  p.b2.resize(1);
  p.b2[0] = uniform(b_hid);
  p.input_mean = MlpParams<T>::Vector::Zero(inputs);
  p.input_scale = MlpParams<T>::Vector::Ones(inputs);
  return p;
}

template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 1> mlp_logits(const MlpParams<T>& p,
                                               const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& X) {
  if (X.cols() != p.inputs()) {
    throw Error(ErrorKind::DimMismatch, "expected " + std::to_string(p.inputs()) + " features, got " +
                                            std::to_string(X.cols()));
  }
  const auto Z = ((X.rowwise() - p.input_mean.transpose()).array().rowwise() /
                  p.input_scale.transpose().array()).matrix();
  auto A = ((Z * p.w1.transpose()).rowwise() + p.b1.transpose()).eval();
  A = A.unaryExpr([](T v) { return nn::gelu(v); });
  return (A * p.w2).array() + p.b2[0];
}

/// Mean binary cross-entropy over the batch and its exact gradient.
template <class T>
T mlp_loss_and_gradient(const MlpParams<T>& p, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& X,
                        const Eigen::VectorXi& y, MlpParams<T>& grad) {
  using Matrix = typename MlpParams<T>::Matrix;
  const Eigen::Index n = X.rows();
  const Matrix Z = ((X.rowwise() - p.input_mean.transpose()).array().rowwise() /
                    p.input_scale.transpose().array()).matrix();
  const Matrix pre = (Z * p.w1.transpose()).rowwise() + p.b1.transpose();
  const Matrix H = pre.unaryExpr([](T v) { return nn::gelu(v); });
  const auto logits = ((H * p.w2).array() + p.b2[0]).eval();

  T loss = 0;
  Eigen::Matrix<T, Eigen::Dynamic, 1> dlogit(n);
  const T inv_n = T(1) / static_cast<T>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T target = static_cast<T>(y[i]);
    loss += nn::bce_with_logits(logits[i], target);
    dlogit[i] = (nn::sigmoid(logits[i]) - target) * inv_n;
  }
  grad = p.zeros_like();
  grad.w2 = H.transpose() * dlogit;
  grad.b2[0] = dlogit.sum();
  const Matrix dpre = (dlogit * p.w2.transpose()).cwiseProduct(
      pre.unaryExpr([](T v) { return nn::gelu_grad(v); }));
  grad.w1 = dpre.transpose() * Z;
  grad.b1 = dpre.colwise().sum().transpose();
  return loss * inv_n;
}

/// Trains with AdamW on mini-batches. With a validation set, keeps the
/// checkpoint with the best validation accuracy and stops after `patience`
/// epochs without improvement. Weights are rounded to binary32 on return.
MlpParams<double> fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config,
                          const TabularData* validation = nullptr, TrainingHistory* history = nullptr);

double predict_mlp(const MlpParams<double>& params, const Eigen::Ref<const Eigen::VectorXd>& x);
Eigen::VectorXd predict_mlp_batch(const MlpParams<double>& params, const Eigen::MatrixXd& X);

}  // namespace muse
