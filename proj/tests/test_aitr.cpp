#include "helpers.hpp"

#include "muse/adamw.hpp"
#include "muse/aitr_train.hpp"
#include "muse/synthetic.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

using namespace muse;

namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

AitrConfig tiny_config(Pooling pooling, bool use_muse = true) {
  AitrConfig c;
  c.n_layers = 2;
  c.heads = {1, 2};
  c.ff_width = 12;
  c.dim = 8;
  c.dropout = 0.0;
  c.pooling = pooling;
  c.use_muse = use_muse;
  c.seed = 11;
  return c;
}

AitrExample<double> random_example(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  AitrExample<double> ex;
  ex.tokens = MatD(7, dim);
  for (Eigen::Index i = 0; i < ex.tokens.size(); ++i) ex.tokens.data()[i] = n(rng);
  for (int j = 0; j < 6; ++j) ex.muse[j] = std::tanh(n(rng));
  ex.target = static_cast<int>(rng() % 2);
  return ex;
}

// Loop-based reference network, written without the library's helpers.
double ref_gelu(double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); }

MatD ref_layer_norm(const MatD& x, const VecD& g, const VecD& b) {
  MatD y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = 0, var = 0;
    for (Eigen::Index k = 0; k < x.cols(); ++k) mu += x(r, k);
    mu /= static_cast<double>(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) var += (x(r, k) - mu) * (x(r, k) - mu);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) y(r, k) = (x(r, k) - mu) / std::sqrt(var + 1e-5) * g[k] + b[k];
  }
  return y;
}

MatD ref_affine(const MatD& x, const MatD& w, const VecD& b) {
  MatD y(x.rows(), w.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      double s = b.size() ? b[o] : 0.0;
      for (Eigen::Index i = 0; i < w.cols(); ++i) s += x(r, i) * w(o, i);
      y(r, o) = s;
    }
  }
  return y;
}

MatD ref_softmax_attend(const MatD& q, const MatD& k, const MatD& v, double scale) {
  MatD out(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> s(static_cast<std::size_t>(k.rows()));
    double mx = -1e300, z = 0;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      s[static_cast<std::size_t>(j)] = dot * scale;
      mx = std::max(mx, s[static_cast<std::size_t>(j)]);
    }
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      double acc = 0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) acc += s[static_cast<std::size_t>(j)] / z * v(j, c);
      out(i, c) = acc;
    }
  }
  return out;
}

double ref_logit(const AitrParams<double>& p, const AitrConfig& c, const AitrExample<double>& ex) {
  const Eigen::Index d = c.dim;
  MatD x = MatD::Zero(c.seq_len(), d);
  for (Eigen::Index k = 0; k < d; ++k) x(0, k) = p.cls[k];
  for (int r = 0; r < 7; ++r)
    for (Eigen::Index k = 0; k < d; ++k) x(r + 1, k) = ex.tokens(r, k);
  if (c.use_muse) {
    for (Eigen::Index k = 0; k < d; ++k) {
      double s = p.muse_b[k];
      for (int j = 0; j < 6; ++j) s += p.muse_w(k, j) * ex.muse[j];
      x(8, k) = s;
    }
  }
  if (p.pos.size()) x += p.pos;
  MatD cls(c.n_layers, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& L = p.layers[static_cast<std::size_t>(l)];
    const int h = c.heads[static_cast<std::size_t>(l)];
    const Eigen::Index dh = d / h;
    MatD a = ref_layer_norm(x, L.ln1_g, L.ln1_b);
    MatD q = ref_affine(a, L.wq, L.bq), k = ref_affine(a, L.wk, L.bk), v = ref_affine(a, L.wv, L.bv);
    MatD o(x.rows(), d);
    for (int hh = 0; hh < h; ++hh) {
      o.middleCols(hh * dh, dh) = ref_softmax_attend(q.middleCols(hh * dh, dh), k.middleCols(hh * dh, dh),
                                                     v.middleCols(hh * dh, dh), 1.0 / std::sqrt(double(dh)));
    }
    x += ref_affine(o, L.wo, L.bo);
    MatD u = ref_affine(ref_layer_norm(x, L.ln2_g, L.ln2_b), L.ff1_w, L.ff1_b);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = ref_gelu(u.data()[i]);
    x += ref_affine(u, L.ff2_w, L.ff2_b);
    cls.row(l) = x.row(0);
  }
  VecD pooled(d);
  switch (c.pooling) {
    case Pooling::Attention: {
      VecD none;
      MatD ctx = ref_softmax_attend(ref_affine(cls, p.pool_wq, none), ref_affine(cls, p.pool_wk, none),
                                    ref_affine(cls, p.pool_wv, none), 1.0 / std::sqrt(double(d)));
      for (Eigen::Index k = 0; k < d; ++k) {
        double s = 0;
        for (int l = 0; l < c.n_layers; ++l) s += ctx(l, k);
        pooled[k] = s / c.n_layers;
      }
      break;
    }
    case Pooling::Max:
      for (Eigen::Index k = 0; k < d; ++k) {
        pooled[k] = cls(0, k);
        for (int l = 1; l < c.n_layers; ++l) pooled[k] = std::max(pooled[k], cls(l, k));
      }
      break;
    case Pooling::Weighted: {
      double z = 0;
      for (int l = 0; l < c.n_layers; ++l) z += std::exp(p.pool_logits[l]);
      pooled.setZero();
      for (int l = 0; l < c.n_layers; ++l)
        for (Eigen::Index k = 0; k < d; ++k) pooled[k] += std::exp(p.pool_logits[l]) / z * cls(l, k);
      break;
    }
    case Pooling::None:
      pooled = cls.row(c.n_layers - 1).transpose();
      break;
  }
  double logit = p.head_b1[0];
  for (Eigen::Index o = 0; o < d; ++o) {
    double s = p.head_b0[o];
    for (Eigen::Index k = 0; k < d; ++k) s += p.head_w0(o, k) * pooled[k];
    logit += p.head_w1[o] * ref_gelu(s);
  }
  return logit;
}

double mean_bce(const AitrParams<double>& p, const AitrConfig& c, const std::vector<AitrExample<double>>& xs) {
  double total = 0;
  for (const auto& ex : xs) {
    const double prob = 1 / (1 + std::exp(-ref_logit(p, c, ex)));
    total += ex.target ? -std::log(prob) : -std::log(1 - prob);
  }
  return total / static_cast<double>(xs.size());
}

AitrParams<double> perturbed(const AitrConfig& c, std::uint64_t seed) {
  AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 0.3);
  // move LayerNorm gains, biases and pooling logits off their initial values
  p.for_each_tensor([&](const std::string& name, auto& t) {
    if (name.find("ln") != std::string::npos || name == "pool_logits") {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    }
  });
  return p;
}

std::vector<AitrExample<float>> encoded_synthetic(std::size_t n_per_class, std::uint64_t seed, int dim = 16) {
  SyntheticConfig cfg = newsclippings_preset();
  cfg.n_per_class = n_per_class;
  cfg.dim = dim;
  cfg.seed = seed;
  return encode_dataset(generate_synthetic(cfg));
}

}  // namespace

TEST_CASE("fuse_modalities matches element-wise definitions") {
  Eigen::VectorXf a(3), b(3);
  a << 1, -2, 0.5f;
  b << 3, 4, -2;
  const auto f = fuse_modalities(a, b);
  for (int k = 0; k < 3; ++k) {
    CHECK(f[0][k] == a[k]);
    CHECK(f[1][k] == b[k]);
    CHECK(f[2][k] == a[k] + b[k]);
    CHECK(f[3][k] == a[k] - b[k]);
    CHECK(f[4][k] == a[k] * b[k]);
  }
  CHECK(f[4][1] == -8.0f);
  CHECK_THROWS_AS(fuse_modalities(a, Eigen::VectorXf(4)), Error);
}

TEST_CASE("build_input layout and sequence length") {
  std::mt19937_64 rng(3);
  Sample s = testing::random_sample("s", 8, 3, 2, rng);
  const RankedEvidence r = rerank_evidence(s);
  for (bool use_muse : {true, false}) {
    AitrConfig c = tiny_config(Pooling::Attention, use_muse);
    const AitrParams<float> p = init_aitr(c);
    const Mat<float> x = build_input(s, r, p, c);
    CHECK(x.rows() == (use_muse ? 9 : 8));
    CHECK(x.cols() == 8);
    CHECK(x.row(0).transpose() == p.cls);
    CHECK(x.row(1).transpose() == s.image);
    CHECK(x.row(2).transpose() == s.text);
    CHECK(x.row(5).transpose() == s.image.cwiseProduct(s.text));
    CHECK(x.row(6).transpose() == s.image_evidence[*r.image_index]);
    CHECK(x.row(7).transpose() == s.text_evidence[*r.text_index]);
    if (use_muse) {
      const MuseVector m = compute_muse(s, r);
      for (int k = 0; k < 8; ++k) {
        double v = p.muse_b[k];
        for (int j = 0; j < 6; ++j) v += p.muse_w(k, j) * m.values[static_cast<std::size_t>(j)];
        CHECK(x(8, k) == doctest::Approx(v).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("missing evidence yields zero tokens") {
  std::mt19937_64 rng(4);
  Sample s = testing::random_sample("s", 8, 0, 0, rng);
  const AitrConfig c = tiny_config(Pooling::Attention);
  const Mat<float> x = build_input(s, rerank_evidence(s), init_aitr(c), c);
  CHECK(x.row(6).isZero());
  CHECK(x.row(7).isZero());
  const AitrExample<float> ex = encode_example<float>(s, rerank_evidence(s), 0);
  CHECK(ex.muse[0] != 0.0f);
  CHECK(ex.muse.tail(5).isZero());
}

TEST_CASE("config validation") {
  AitrConfig c = tiny_config(Pooling::Attention);
  CHECK_NOTHROW(c.validate());
  AitrConfig bad = c;
  bad.heads = {1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.heads = {3, 2};
  CHECK_THROWS_AS(init_aitr(bad), Error);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  for (Pooling p : {Pooling::Attention, Pooling::Max, Pooling::Weighted, Pooling::None}) {
    CHECK(parse_pooling(pooling_name(p)) == p);
  }
  CHECK_THROWS_AS(parse_pooling("mean"), Error);
}

TEST_CASE("parameter groups follow the pooling choice") {
  std::set<std::string> attention, weighted;
  init_aitr(tiny_config(Pooling::Attention)).for_each_tensor([&](const std::string& n, auto&) { attention.insert(n); });
  init_aitr(tiny_config(Pooling::Weighted)).for_each_tensor([&](const std::string& n, auto&) { weighted.insert(n); });
  CHECK(attention.count("pool_wq"));
  CHECK_FALSE(attention.count("pool_logits"));
  CHECK(weighted.count("pool_logits"));
  CHECK_FALSE(weighted.count("pool_wv"));
  CHECK(attention.count("layers.1.ff2_b"));
}

TEST_CASE("forward pass agrees with a loop reference") {
  std::mt19937_64 rng(5);
  for (Pooling pooling : {Pooling::Attention, Pooling::Max, Pooling::Weighted, Pooling::None}) {
    for (bool use_muse : {true, false}) {
      CAPTURE(pooling_name(pooling));
      AitrConfig c = tiny_config(pooling, use_muse);
      c.positional = use_muse;
      const AitrParams<double> p = perturbed(c, 9);
      SampleCache<double> cache;
      for (int i = 0; i < 4; ++i) {
        const AitrExample<double> ex = random_example(c.dim, rng);
        const double got = forward_sample(p, c, build_input(ex, p, c), cache, nullptr);
        CHECK(got == doctest::Approx(ref_logit(p, c, ex)).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("analytic gradient matches central differences for every tensor") {
  std::mt19937_64 rng(6);
  for (Pooling pooling : {Pooling::Attention, Pooling::Max, Pooling::Weighted, Pooling::None}) {
    CAPTURE(pooling_name(pooling));
    AitrConfig c = tiny_config(pooling);
    c.positional = true;
    AitrParams<double> p = perturbed(c, 10);
    std::vector<AitrExample<double>> xs;
    for (int i = 0; i < 2; ++i) xs.push_back(random_example(c.dim, rng));
    std::vector<const AitrExample<double>*> batch;
    for (const auto& ex : xs) batch.push_back(&ex);
    AitrParams<double> grad;
    const double loss = aitr_loss_and_gradient(p, c, batch, grad);
    CHECK(loss == doctest::Approx(mean_bce(p, c, xs)).epsilon(1e-10));

    auto params = tensors_of<double>(p);
    auto grads = tensors_of<double>(grad);
    REQUIRE(params.size() == grads.size());
    const double h = 1e-5;
    for (std::size_t t = 0; t < params.size(); ++t) {
      double worst = 0;
      for (Eigen::Index i = 0; i < params[t].size; ++i) {
        double& w = params[t].data[i];
        const double saved = w;
        w = saved + h;
        const double up = mean_bce(p, c, xs);
        w = saved - h;
        const double down = mean_bce(p, c, xs);
        w = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = grads[t].data[i];
        worst = std::max(worst, std::abs(analytic - numeric) /
                                    std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
      }
      CAPTURE(params[t].name);
      CHECK(worst < 1e-3);
    }
  }
}

TEST_CASE("single-layer attention pooling reduces to the value map") {
  AitrConfig c = tiny_config(Pooling::Attention);
  c.n_layers = 1;
  c.heads = {2};
  const AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(7);
  const AitrExample<double> ex = random_example(c.dim, rng);
  const ForwardTrace<double> tr = forward(p, c, {build_input(ex, p, c)}, false);
  CHECK(tr.pool_attention[0](0, 0) == doctest::Approx(1.0));
  const VecD expected = p.pool_wv * tr.intermediate_cls[0].row(0).transpose();
  CHECK((tr.pooled[0] - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("None pooling forwards the last classification token") {
  const AitrConfig c = tiny_config(Pooling::None);
  const AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(8);
  const AitrExample<double> ex = random_example(c.dim, rng);
  const ForwardTrace<double> tr = forward(p, c, {build_input(ex, p, c)}, false);
  CHECK(tr.pooled[0] == tr.intermediate_cls[0].row(c.n_layers - 1).transpose());
}

TEST_CASE("attention maps are row-stochastic") {
  const AitrConfig c = tiny_config(Pooling::Attention);
  const AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(9);
  std::vector<MatD> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(build_input(random_example(c.dim, rng), p, c));
  const ForwardTrace<double> tr = forward(p, c, batch, false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK((tr.pool_attention[i].rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    for (const auto& layer : tr.layer_attention[i]) {
      for (const auto& head : layer) {
        CHECK(head.rows() == c.seq_len());
        CHECK((head.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
        CHECK(head.minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("eval mode is deterministic and batch-order invariant") {
  AitrConfig c = tiny_config(Pooling::Attention);
  c.dropout = 0.3;
  const AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(10);
  std::vector<MatD> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(build_input(random_example(c.dim, rng), p, c));
  const VecD a = forward(p, c, batch, false).logits;
  CHECK(a == forward(p, c, batch, false, 99).logits);
  std::vector<MatD> reversed(batch.rbegin(), batch.rend());
  const VecD b = forward(p, c, reversed, false).logits;
  for (int i = 0; i < 5; ++i) CHECK(a[i] == b[4 - i]);
  CHECK(forward(p, c, batch, true, 1).logits != a);
  CHECK(forward(p, c, batch, true, 1).logits == forward(p, c, batch, true, 1).logits);
}

TEST_CASE("without MUSE the logits ignore the similarity vector") {
  const AitrConfig c = tiny_config(Pooling::Attention, false);
  const AitrParams<double> p = init_aitr(c).cast<double>();
  std::mt19937_64 rng(11);
  AitrExample<double> ex = random_example(c.dim, rng);
  SampleCache<double> cache;
  const double before = forward_sample(p, c, build_input(ex, p, c), cache, nullptr);
  ex.muse.setConstant(0.9);
  CHECK(forward_sample(p, c, build_input(ex, p, c), cache, nullptr) == before);
  AitrConfig with = c;
  with.use_muse = true;
  const AitrParams<double> q = init_aitr(with).cast<double>();
  const double m1 = forward_sample(q, with, build_input(ex, q, with), cache, nullptr);
  ex.muse.setConstant(-0.9);
  CHECK(forward_sample(q, with, build_input(ex, q, with), cache, nullptr) != m1);
}

TEST_CASE("dimension mismatches are rejected") {
  const AitrConfig c = tiny_config(Pooling::Attention);
  const AitrParams<float> p = init_aitr(c);
  AitrExample<float> ex;
  ex.tokens = Mat<float>::Zero(7, 4);
  ex.muse.setZero();
  CHECK_THROWS_AS(build_input(ex, p, c), Error);
  CHECK_THROWS_AS(train_aitr({ex}, {ex}, c), Error);
  CHECK_THROWS_AS(train_aitr(std::vector<AitrExample<float>>{}, {ex}, c), Error);
}

TEST_CASE("training learns synthetic data and honours early stopping") {
  const auto train = encoded_synthetic(150, 1);
  const auto val = encoded_synthetic(60, 2);
  AitrConfig c = tiny_config(Pooling::Attention);
  c.dim = 16;
  c.heads = {2, 4};
  c.ff_width = 32;
  c.lr = 3e-3;
  c.batch_size = 32;
  c.max_epochs = 30;
  c.patience = 4;
  c.dropout = 0.1;
  const AitrFit fit = train_aitr(train, val, c);
  const auto& h = fit.history;
  REQUIRE_FALSE(h.epochs.empty());
  CHECK(h.epochs.front().train_loss > h.epochs.back().train_loss);
  const double best_val = aitr_accuracy(fit.params, c, val);
  CHECK(best_val > 0.8);
  if (h.best_epoch > 0) {
    CHECK(best_val == doctest::Approx(h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].val_accuracy));
  }
  for (const auto& e : h.epochs) CHECK(e.val_accuracy <= best_val + 1e-12);
  if (h.stopped_early) CHECK(static_cast<int>(h.epochs.size()) == h.best_epoch + c.patience);

  const AitrFit again = train_aitr(train, val, c);
  CHECK(tensors_of<float>(const_cast<AitrParams<float>&>(again.params)).front().data[0] ==
        tensors_of<float>(const_cast<AitrParams<float>&>(fit.params)).front().data[0]);
  CHECK(aitr_logits(again.params, c, val) == aitr_logits(fit.params, c, val));
}

TEST_CASE("zero epochs returns the initial parameters") {
  const auto train = encoded_synthetic(10, 3, 8);
  AitrConfig c = tiny_config(Pooling::Max);
  c.max_epochs = 0;
  const AitrFit fit = train_aitr(train, train, c);
  CHECK(fit.history.epochs.empty());
  CHECK(aitr_logits(fit.params, c, train) == aitr_logits(init_aitr(c), c, train));
}

TEST_CASE("default grid shape") {
  AitrConfig base;
  CHECK(default_grid(base).size() == 24);
  base.pooling = Pooling::None;
  const auto g = default_grid(base);
  CHECK(g.size() == 12);
  for (const auto& c : g) CHECK((c.heads == std::vector<int>{4, 4, 4, 4} || c.heads == std::vector<int>{8, 8, 8, 8}));
}

TEST_CASE("grid search skips failing cells and keeps the first best") {
  const auto train = encoded_synthetic(20, 4, 8);
  const auto val = encoded_synthetic(10, 5, 8);
  AitrConfig ok = tiny_config(Pooling::Weighted);
  ok.max_epochs = 2;
  ok.batch_size = 16;
  AitrConfig broken = ok;
  broken.heads = {3, 3};
  AitrConfig same = ok;
  const GridResult r = grid_search(train, val, {broken, ok, same});
  REQUIRE(r.cells.size() == 3);
  CHECK(r.cells[0].failed);
  CHECK_FALSE(r.cells[0].error.empty());
  CHECK_FALSE(r.cells[1].failed);
  CHECK(r.cells[1].val_accuracy == r.cells[2].val_accuracy);
  CHECK(r.best == 1);
  CHECK_THROWS_AS(grid_search(train, val, {broken}), Error);
}

TEST_CASE("checkpoint round trip is exact") {
  AitrConfig c = tiny_config(Pooling::Attention);
  c.positional = true;
  c.lr = 3.5e-4;
  const AitrParams<float> p = init_aitr(c);
  const auto dir = testing::temp_dir("aitr_ckpt");
  save_aitr_checkpoint(dir / "m.bin", p, c);
  const auto [q, c2] = load_aitr_checkpoint(dir / "m.bin");
  CHECK(c2 == c);
  auto a = tensors_of<float>(const_cast<AitrParams<float>&>(p));
  auto b = tensors_of<float>(const_cast<AitrParams<float>&>(q));
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].name == b[t].name);
    CHECK(std::memcmp(a[t].data, b[t].data, sizeof(float) * static_cast<std::size_t>(a[t].size)) == 0);
  }
  CHECK_THROWS_AS(load_aitr_checkpoint(dir / "absent.bin"), Error);
  {
    std::ofstream junk(dir / "junk.bin", std::ios::binary);
    junk << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_aitr_checkpoint(dir / "junk.bin"), Error);
  std::filesystem::resize_file(dir / "m.bin", std::filesystem::file_size(dir / "m.bin") - 8);
  CHECK_THROWS_AS(load_aitr_checkpoint(dir / "m.bin"), Error);
}
