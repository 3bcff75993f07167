#pragma once

// Transformer classifier that attends over the classification tokens of
// every encoder layer. Everything here is templated on the scalar so the
// same code trains in float and is gradient-checked in double.

#include "muse/dataset.hpp"
#include "muse/error.hpp"
#include "muse/nn_ops.hpp"
#include "muse/random.hpp"
#include "muse/similarity.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace muse {

enum class Pooling { Attention, Max, Weighted, None };

std::string_view pooling_name(Pooling pooling);
Pooling parse_pooling(std::string_view name);

struct AitrConfig {
  int n_layers = 4;
  std::vector<int> heads{1, 2, 4, 8};  // one entry per layer
  int ff_width = 2048;
  int dim = 768;
  double dropout = 0.1;
  Pooling pooling = Pooling::Attention;
  bool use_muse = true;
  bool positional = false;  // learned positional embeddings
  double lr = 5e-5;
  double weight_decay = 0.01;
  int batch_size = 512;
  int max_epochs = 50;
  int patience = 10;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig when the invariants do not hold.
  void validate() const;
  int seq_len() const { return use_muse ? 9 : 8; }
  bool operator==(const AitrConfig&) const = default;
};

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Pre-norm encoder layer. Affine maps are stored (out x in).
template <class T>
struct EncoderLayerParams {
  Vec<T> ln1_g, ln1_b;
  Mat<T> wq, wk, wv, wo;
  Vec<T> bq, bk, bv, bo;
  Vec<T> ln2_g, ln2_b;
  Mat<T> ff1_w;  // z x d
  Vec<T> ff1_b;
  Mat<T> ff2_w;  // d x z
  Vec<T> ff2_b;

  template <class F>
  void for_each_tensor(const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", ln1_g);
    f(prefix + "ln1_b", ln1_b);
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
    f(prefix + "bq", bq);
    f(prefix + "bk", bk);
    f(prefix + "bv", bv);
    f(prefix + "bo", bo);
    f(prefix + "ln2_g", ln2_g);
    f(prefix + "ln2_b", ln2_b);
    f(prefix + "ff1_w", ff1_w);
    f(prefix + "ff1_b", ff1_b);
    f(prefix + "ff2_w", ff2_w);
    f(prefix + "ff2_b", ff2_b);
  }

  template <class U>
  EncoderLayerParams<U> cast() const {
    return {ln1_g.template cast<U>(), ln1_b.template cast<U>(), wq.template cast<U>(),
            wk.template cast<U>(),    wv.template cast<U>(),    wo.template cast<U>(),
            bq.template cast<U>(),    bk.template cast<U>(),    bv.template cast<U>(),
            bo.template cast<U>(),    ln2_g.template cast<U>(), ln2_b.template cast<U>(),
            ff1_w.template cast<U>(), ff1_b.template cast<U>(), ff2_w.template cast<U>(),
            ff2_b.template cast<U>()};
  }
};

template <class T>
struct AitrParams {
  Vec<T> cls;      // C0
  Mat<T> muse_w;   // d x 6
  Vec<T> muse_b;
  Mat<T> pos;      // L x d, empty unless positional
  std::vector<EncoderLayerParams<T>> layers;
  Mat<T> pool_wq, pool_wk, pool_wv;  // d x d, Attention pooling only
  Vec<T> pool_logits;                // n, Weighted pooling only
  Mat<T> head_w0;                    // d x d
  Vec<T> head_b0;
  Vec<T> head_w1;                    // d
  Vec<T> head_b1;                    // 1

  /// Visits every allocated tensor in a fixed order with a stable name.
  template <class F>
  void for_each_tensor(F&& f) {
    auto visit = [&](const std::string& name, auto& t) {
      if (t.size() > 0) f(name, t);
    };
    visit("cls", cls);
    visit("muse_w", muse_w);
    visit("muse_b", muse_b);
    visit("pos", pos);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].for_each_tensor("layers." + std::to_string(i) + ".", visit);
    }
    visit("pool_wq", pool_wq);
    visit("pool_wk", pool_wk);
    visit("pool_wv", pool_wv);
    visit("pool_logits", pool_logits);
    visit("head_w0", head_w0);
    visit("head_b0", head_b0);
    visit("head_w1", head_w1);
    visit("head_b1", head_b1);
  }

  AitrParams zeros_like() const {
    AitrParams z = *this;
    z.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }

  template <class U>
  AitrParams<U> cast() const {
    AitrParams<U> out;
    out.cls = cls.template cast<U>();
    out.muse_w = muse_w.template cast<U>();
    out.muse_b = muse_b.template cast<U>();
    out.pos = pos.template cast<U>();
    for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
    out.pool_wq = pool_wq.template cast<U>();
    out.pool_wk = pool_wk.template cast<U>();
    out.pool_wv = pool_wv.template cast<U>();
    out.pool_logits = pool_logits.template cast<U>();
    out.head_w0 = head_w0.template cast<U>();
    out.head_b0 = head_b0.template cast<U>();
    out.head_w1 = head_w1.template cast<U>();
    out.head_b1 = head_b1.template cast<U>();
    return out;
  }
};

/// Fixed per-sample inputs: the five fusion tokens, the two top-1 evidence
/// embeddings (zero when absent) and the MUSE vector (masked entries 0).
template <class T>
struct AitrExample {
  Mat<T> tokens;  // 7 x d
  Eigen::Matrix<T, 6, 1> muse;
  int target = 0;
};

/// (F_iv, F_tv, F_iv + F_tv, F_iv - F_tv, F_iv * F_tv), element-wise.
template <class DerivedA, class DerivedB>
std::array<Vec<typename DerivedA::Scalar>, 5> fuse_modalities(const Eigen::MatrixBase<DerivedA>& image,
                                                             const Eigen::MatrixBase<DerivedB>& text) {
  if (image.size() != text.size()) {
    throw Error(ErrorKind::DimMismatch, "fusion inputs differ in dimension");
  }
  return {image, text, image + text, image - text, image.cwiseProduct(text)};
}

template <class T>
AitrExample<T> encode_example(const Sample& sample, const RankedEvidence& ranked, int target) {
  const Eigen::Index d = sample.dim();
  if (sample.text.size() != d) throw Error(ErrorKind::DimMismatch, "claim text dimension differs");
  AitrExample<T> ex;
  ex.tokens = Mat<T>::Zero(7, d);
  const auto fused = fuse_modalities(sample.image.cast<T>(), sample.text.cast<T>());
  for (int k = 0; k < 5; ++k) ex.tokens.row(k) = fused[static_cast<std::size_t>(k)].transpose();
  if (ranked.image_index) ex.tokens.row(5) = sample.image_evidence.at(*ranked.image_index).cast<T>().transpose();
  if (ranked.text_index) ex.tokens.row(6) = sample.text_evidence.at(*ranked.text_index).cast<T>().transpose();
  const MuseVector m = compute_muse(sample, ranked);
  for (int j = 0; j < 6; ++j) ex.muse[j] = static_cast<T>(m.values[static_cast<std::size_t>(j)]);
  ex.target = target;
  return ex;
}

/// Token sequence [C0; fusion x5; I_e; T_e; projected MUSE] (L x d).
template <class T>
Mat<T> build_input(const AitrExample<T>& ex, const AitrParams<T>& params, const AitrConfig& config) {
  const Eigen::Index d = params.cls.size();
  if (ex.tokens.cols() != d) {
    throw Error(ErrorKind::DimMismatch, "example dim " + std::to_string(ex.tokens.cols()) +
                                            " vs model dim " + std::to_string(d));
  }
  Mat<T> x(config.seq_len(), d);
  x.row(0) = params.cls.transpose();
  x.middleRows(1, 7) = ex.tokens;
  if (config.use_muse) x.row(8) = (params.muse_w * ex.muse.template cast<T>() + params.muse_b).transpose();
  if (params.pos.size() > 0) x += params.pos;
  return x;
}

template <class T>
Mat<T> build_input(const Sample& sample, const RankedEvidence& ranked, const AitrParams<T>& params,
                   const AitrConfig& config) {
  return build_input(encode_example<T>(sample, ranked, 0), params, config);
}

AitrParams<float> init_aitr(const AitrConfig& config);

namespace aitr_detail {

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct LayerNormCache {
  Mat<T> xhat;
  Vec<T> rstd;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Vec<T>& g, const Vec<T>& b, LayerNormCache<T>& cache) {
  const Eigen::Index d = x.cols();
  cache.xhat.resize(x.rows(), d);
  cache.rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd[r] = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mu) * rstd;
  }
  return (cache.xhat.array().rowwise() * g.transpose().array()).rowwise() + b.transpose().array();
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Vec<T>& g, const LayerNormCache<T>& cache, Vec<T>& dg,
                           Vec<T>& db) {
  dg += (dy.cwiseProduct(cache.xhat)).colwise().sum().transpose();
  db += dy.colwise().sum().transpose();
  const Mat<T> dxhat = dy.array().rowwise() * g.transpose().array();
  Mat<T> dx(dy.rows(), dy.cols());
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_dxhat = dxhat.row(r).sum() * inv_d;
    const T mean_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r)) * inv_d;
    dx.row(r) = cache.rstd[r] *
                (dxhat.row(r).array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

/// x W^T + 1 b^T
template <class T>
Mat<T> affine(const Mat<T>& x, const Mat<T>& w, const Vec<T>& b) {
  Mat<T> y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  Mat<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(*rng) < p ? T(0) : keep;
  return m;
}

template <class T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  if (mask.size() > 0) x.array() *= mask.array();
}

/// dS = P .* (dP - rowsum(dP .* P)), per row.
template <class T>
Mat<T> softmax_backward(const Mat<T>& p, const Mat<T>& dp) {
  Mat<T> ds = dp;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const T dot = p.row(r).dot(dp.row(r));
    ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
  }
  return ds;
}

template <class T>
struct LayerCache {
  Mat<T> x_in;
  LayerNormCache<T> ln1;
  Mat<T> a;  // ln1 output
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;  // per head, L x L
  Mat<T> o;                   // concatenated head outputs
  Mat<T> attn_mask;
  LayerNormCache<T> ln2;
  Mat<T> b;  // ln2 output
  Mat<T> u;  // pre-activation, L x z
  Mat<T> h;  // post-activation, after dropout
  Mat<T> hidden_mask;
  Mat<T> ff_mask;
};

}  // namespace aitr_detail

template <class T>
struct SampleCache {
  Mat<T> x0;
  std::vector<aitr_detail::LayerCache<T>> layers;
  Mat<T> cls_stack;  // n x d, rows C_1..C_n
  Mat<T> pool_q, pool_k, pool_v, pool_attn;
  Vec<T> pool_weights;
  Eigen::VectorXi max_arg;
  Vec<T> pooled;
  Vec<T> head_pre;
  Vec<T> head_hidden;
  T logit = 0;
};

/// One pre-norm encoder layer with h heads.
template <class T>
Mat<T> encoder_layer_forward(const EncoderLayerParams<T>& p, int heads, double dropout, const Mat<T>& x,
                             aitr_detail::LayerCache<T>& c, Rng* rng) {
  using namespace aitr_detail;
  const Eigen::Index L = x.rows(), d = x.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.x_in = x;
  c.a = layer_norm(x, p.ln1_g, p.ln1_b, c.ln1);
  c.q = affine(c.a, p.wq, p.bq);
  c.k = affine(c.a, p.wk, p.bk);
  c.v = affine(c.a, p.wv, p.bv);
  c.o.resize(L, d);
  c.probs.resize(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
    nn::softmax_rows(s);
    c.o.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat<T> attn = affine(c.o, p.wo, p.bo);
  c.attn_mask = dropout_mask<T>(L, d, dropout, rng);
  apply_mask(attn, c.attn_mask);
  Mat<T> x1 = x + attn;

  c.b = layer_norm(x1, p.ln2_g, p.ln2_b, c.ln2);
  c.u = affine(c.b, p.ff1_w, p.ff1_b);
  c.h = c.u.unaryExpr([](T v) { return nn::gelu(v); });
  c.hidden_mask = dropout_mask<T>(L, c.u.cols(), dropout, rng);
  apply_mask(c.h, c.hidden_mask);
  Mat<T> f = affine(c.h, p.ff2_w, p.ff2_b);
  c.ff_mask = dropout_mask<T>(L, d, dropout, rng);
  apply_mask(f, c.ff_mask);
  return x1 + f;
}

/// Accumulates parameter gradients into g and returns d(loss)/d(x_in).
template <class T>
Mat<T> encoder_layer_backward(const EncoderLayerParams<T>& p, int heads, const aitr_detail::LayerCache<T>& c,
                              const Mat<T>& dout, EncoderLayerParams<T>& g) {
  using namespace aitr_detail;
  const Eigen::Index d = dout.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // Feed-forward branch.
  Mat<T> df = dout;
  apply_mask(df, c.ff_mask);
  g.ff2_w.noalias() += df.transpose() * c.h;
  g.ff2_b += df.colwise().sum().transpose();
  Mat<T> dh_act = df * p.ff2_w;
  apply_mask(dh_act, c.hidden_mask);
  const Mat<T> du = dh_act.cwiseProduct(c.u.unaryExpr([](T v) { return nn::gelu_grad(v); }));
  g.ff1_w.noalias() += du.transpose() * c.b;
  g.ff1_b += du.colwise().sum().transpose();
  const Mat<T> db = du * p.ff1_w;
  Mat<T> dx1 = dout + layer_norm_backward(db, p.ln2_g, c.ln2, g.ln2_g, g.ln2_b);

  // Attention branch.
  Mat<T> dattn = dx1;
  apply_mask(dattn, c.attn_mask);
  g.wo.noalias() += dattn.transpose() * c.o;
  g.bo += dattn.colwise().sum().transpose();
  const Mat<T> d_o = dattn * p.wo;
  Mat<T> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& prob = c.probs[static_cast<std::size_t>(h)];
    const auto doh = d_o.middleCols(h * dh, dh);
    const Mat<T> dprob = doh * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = prob.transpose() * doh;
    const Mat<T> ds = softmax_backward(prob, dprob) * scale;
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.wq.noalias() += dq.transpose() * c.a;
  g.wk.noalias() += dk.transpose() * c.a;
  g.wv.noalias() += dv.transpose() * c.a;
  g.bq += dq.colwise().sum().transpose();
  g.bk += dk.colwise().sum().transpose();
  g.bv += dv.colwise().sum().transpose();
  const Mat<T> da = dq * p.wq + dk * p.wk + dv * p.wv;
  return dx1 + layer_norm_backward(da, p.ln1_g, c.ln1, g.ln1_g, g.ln1_b);
}

/// Full forward pass for one token sequence. Dropout is active iff
/// dropout_rng is non-null. Returns the logit.
template <class T>
T forward_sample(const AitrParams<T>& params, const AitrConfig& config, const Mat<T>& x0, SampleCache<T>& c,
                 Rng* dropout_rng) {
  using namespace aitr_detail;
  const int n = config.n_layers;
  const Eigen::Index d = params.cls.size();
  if (x0.cols() != d || x0.rows() != config.seq_len() || static_cast<int>(params.layers.size()) != n) {
    throw Error(ErrorKind::ShapeError, "token sequence or parameters do not match the configuration");
  }
  c.x0 = x0;
  c.layers.resize(static_cast<std::size_t>(n));
  c.cls_stack.resize(n, d);
  Mat<T> x = x0;
  for (int i = 0; i < n; ++i) {
    x = encoder_layer_forward(params.layers[static_cast<std::size_t>(i)], config.heads[static_cast<std::size_t>(i)],
                              config.dropout, x, c.layers[static_cast<std::size_t>(i)], dropout_rng);
    c.cls_stack.row(i) = x.row(0);
  }

  switch (config.pooling) {
    case Pooling::Attention: {
      c.pool_q = c.cls_stack * params.pool_wq.transpose();
      c.pool_k = c.cls_stack * params.pool_wk.transpose();
      c.pool_v = c.cls_stack * params.pool_wv.transpose();
      c.pool_attn = c.pool_q * c.pool_k.transpose() / std::sqrt(static_cast<T>(d));
      nn::softmax_rows(c.pool_attn);
      c.pooled = (c.pool_attn * c.pool_v).colwise().mean().transpose();
      break;
    }
    case Pooling::Max: {
      c.max_arg.resize(d);
      c.pooled.resize(d);
      for (Eigen::Index k = 0; k < d; ++k) {
        Eigen::Index arg;
        c.pooled[k] = c.cls_stack.col(k).maxCoeff(&arg);
        c.max_arg[k] = static_cast<int>(arg);
      }
      break;
    }
    case Pooling::Weighted: {
      Mat<T> w = params.pool_logits.transpose();
      nn::softmax_rows(w);
      c.pool_weights = w.transpose();
      c.pooled = c.cls_stack.transpose() * c.pool_weights;
      break;
    }
    case Pooling::None:
      c.pooled = c.cls_stack.row(n - 1).transpose();
      break;
  }

  c.head_pre = params.head_w0 * c.pooled + params.head_b0;
  c.head_hidden = c.head_pre.unaryExpr([](T v) { return nn::gelu(v); });
  c.logit = params.head_w1.dot(c.head_hidden) + params.head_b1[0];
  if (!std::isfinite(static_cast<double>(c.logit))) {
    throw Error(ErrorKind::NonFiniteActivation, "non-finite logit");
  }
  return c.logit;
}

/// Backpropagates dlogit through the cached pass, accumulating into grad.
template <class T>
void backward_sample(const AitrParams<T>& params, const AitrConfig& config, const SampleCache<T>& c,
                     const AitrExample<T>& ex, T dlogit, AitrParams<T>& grad) {
  const int n = config.n_layers;
  const Eigen::Index d = params.cls.size();

  grad.head_w1 += dlogit * c.head_hidden;
  grad.head_b1[0] += dlogit;
  const Vec<T> dpre = (dlogit * params.head_w1).cwiseProduct(c.head_pre.unaryExpr([](T v) { return nn::gelu_grad(v); }));
  grad.head_w0.noalias() += dpre * c.pooled.transpose();
  grad.head_b0 += dpre;
  const Vec<T> dpooled = params.head_w0.transpose() * dpre;

  Mat<T> dcls = Mat<T>::Zero(n, d);
  switch (config.pooling) {
    case Pooling::Attention: {
      const Mat<T> dca = (dpooled / static_cast<T>(n)).transpose().replicate(n, 1);
      const Mat<T> dattn = dca * c.pool_v.transpose();
      const Mat<T> dv = c.pool_attn.transpose() * dca;
      const Mat<T> ds = aitr_detail::softmax_backward(c.pool_attn, dattn) / std::sqrt(static_cast<T>(d));
      const Mat<T> dq = ds * c.pool_k;
      const Mat<T> dk = ds.transpose() * c.pool_q;
      grad.pool_wq.noalias() += dq.transpose() * c.cls_stack;
      grad.pool_wk.noalias() += dk.transpose() * c.cls_stack;
      grad.pool_wv.noalias() += dv.transpose() * c.cls_stack;
      dcls = dq * params.pool_wq + dk * params.pool_wk + dv * params.pool_wv;
      break;
    }
    case Pooling::Max:
      for (Eigen::Index k = 0; k < d; ++k) dcls(c.max_arg[k], k) += dpooled[k];
      break;
    case Pooling::Weighted: {
      const Vec<T> dw = c.cls_stack * dpooled;
      dcls = c.pool_weights * dpooled.transpose();
      const T dot = c.pool_weights.dot(dw);
      grad.pool_logits += c.pool_weights.cwiseProduct((dw.array() - dot).matrix());
      break;
    }
    case Pooling::None:
      dcls.row(n - 1) = dpooled.transpose();
      break;
  }

  Mat<T> dx = Mat<T>::Zero(config.seq_len(), d);
  for (int i = n - 1; i >= 0; --i) {
    dx.row(0) += dcls.row(i);
    dx = encoder_layer_backward(params.layers[static_cast<std::size_t>(i)], config.heads[static_cast<std::size_t>(i)],
                                c.layers[static_cast<std::size_t>(i)], dx, grad.layers[static_cast<std::size_t>(i)]);
  }

  grad.cls += dx.row(0).transpose();
  if (grad.pos.size() > 0) grad.pos += dx;
  if (config.use_muse) {
    grad.muse_w.noalias() += dx.row(8).transpose() * ex.muse.transpose();
    grad.muse_b += dx.row(8).transpose();
  }
}

/// Mean BCE over a batch of examples plus its gradient (dropout off unless
/// dropout_seed is given). Used by the trainer and by gradient checks.
template <class T>
T aitr_loss_and_gradient(const AitrParams<T>& params, const AitrConfig& config,
                         const std::vector<const AitrExample<T>*>& batch, AitrParams<T>& grad,
                         const std::vector<std::uint64_t>* dropout_seeds = nullptr) {
  grad = params.zeros_like();
  T loss = 0;
  const T inv_n = T(1) / static_cast<T>(batch.size());
  SampleCache<T> cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AitrExample<T>& ex = *batch[i];
    Rng rng(dropout_seeds ? (*dropout_seeds)[i] : 0);
    const T logit = forward_sample(params, config, build_input(ex, params, config), cache,
                                   dropout_seeds ? &rng : nullptr);
    const T target = static_cast<T>(ex.target);
    loss += nn::bce_with_logits(logit, target);
    backward_sample(params, config, cache, ex, (nn::sigmoid(logit) - target) * inv_n, grad);
  }
  return loss * inv_n;
}

/// Per-sample outputs of a batched forward pass.
template <class T>
struct ForwardTrace {
  Vec<T> logits;
  std::vector<Mat<T>> intermediate_cls;  // per sample: n x d (C_1..C_n)
  std::vector<Vec<T>> pooled;            // per sample: C_p
  std::vector<Mat<T>> pool_attention;    // per sample: n x n (Attention pooling)
  std::vector<std::vector<std::vector<Mat<T>>>> layer_attention;  // [sample][layer][head]
};

template <class T>
ForwardTrace<T> forward(const AitrParams<T>& params, const AitrConfig& config, const std::vector<Mat<T>>& batch,
                        bool training, std::uint64_t dropout_seed = 0) {
  ForwardTrace<T> trace;
  trace.logits.resize(static_cast<Eigen::Index>(batch.size()));
  SampleCache<T> cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(dropout_seed, i));
    trace.logits[static_cast<Eigen::Index>(i)] =
        forward_sample(params, config, batch[i], cache, training ? &rng : nullptr);
    trace.intermediate_cls.push_back(cache.cls_stack);
    trace.pooled.push_back(cache.pooled);
    trace.pool_attention.push_back(cache.pool_attn);
    std::vector<std::vector<Mat<T>>> per_layer;
    for (const auto& lc : cache.layers) per_layer.push_back(lc.probs);
    trace.layer_attention.push_back(std::move(per_layer));
  }
  return trace;
}

}  // namespace muse
