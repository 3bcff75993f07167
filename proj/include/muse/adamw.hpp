#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace muse {

template <class T>
struct TensorRef {
  std::string name;
  T* data;
  Eigen::Index size;
};

/// Flattens any parameter struct exposing for_each_tensor(f) into spans.
template <class T, class Params>
std::vector<TensorRef<T>> tensors_of(Params& params) {
  std::vector<TensorRef<T>> out;
  params.for_each_tensor([&](std::string_view name, auto& t) {
    out.push_back({std::string(name), t.data(), t.size()});
  });
  return out;
}

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam; decay is applied to every tensor.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options) : opt_(options) {}

  template <class Params>
  void step(Params& params, Params& grads) {
    auto p = tensors_of<T>(params);
    auto g = tensors_of<T>(grads);
    if (m_.empty()) {
      for (const auto& t : p) {
        m_.push_back(Eigen::Array<T, Eigen::Dynamic, 1>::Zero(t.size));
        v_.push_back(Eigen::Array<T, Eigen::Dynamic, 1>::Zero(t.size));
      }
    }
    ++t_;
    const T lr = static_cast<T>(opt_.lr);
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T c1 = T(1) - static_cast<T>(std::pow(opt_.beta1, t_));
    const T c2 = T(1) - static_cast<T>(std::pow(opt_.beta2, t_));
    const T eps = static_cast<T>(opt_.eps);
    const T decay = T(1) - lr * static_cast<T>(opt_.weight_decay);
    for (std::size_t k = 0; k < p.size(); ++k) {
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> w(p[k].data, p[k].size);
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> grad(g[k].data, g[k].size);
      w *= decay;
      m_[k] = b1 * m_[k] + (T(1) - b1) * grad;
      v_[k] = b2 * v_[k] + (T(1) - b2) * grad.square();
      w -= lr * (m_[k] / c1) / ((v_[k] / c2).sqrt() + eps);
    }
  }

  int steps() const { return t_; }

 private:
  AdamWOptions opt_;
  int t_ = 0;
  std::vector<Eigen::Array<T, Eigen::Dynamic, 1>> m_, v_;
};

}  // namespace muse
