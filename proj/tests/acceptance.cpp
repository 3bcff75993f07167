// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include "cli.hpp"
#include "helpers.hpp"

#include "muse/aitr_train.hpp"
#include "muse/classifier.hpp"
#include "muse/evaluation.hpp"
#include "muse/mlp.hpp"
#include "muse/synthetic.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

using namespace muse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_seconds) {
    o.pass = false;
    o.detail += " [over time limit " + std::to_string(static_cast<int>(limit_seconds)) + " s]";
  }
  std::printf("[%s] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "muse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  return cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every file under `a` (manifest excluded) is byte-identical to its twin under `b`.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    const fs::path twin = b / fs::relative(e.path(), a);
    ++files;
    if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) {
      why = fs::relative(e.path(), a).string();
      return false;
    }
  }
  return files > 0;
}

Dataset merged(const fs::path& root) {
  Dataset all;
  for (const char* part : {"train", "val", "test"}) {
    Dataset d = load_dataset(root / part);
    all.samples.insert(all.samples.end(), d.samples.begin(), d.samples.end());
  }
  return all;
}

double accuracy_of(const Classifier& c, const Dataset& d, Task task) {
  const Eigen::VectorXd p = predict_proba(c, d);
  std::vector<int> pred;
  for (Eigen::Index i = 0; i < p.size(); ++i) pred.push_back(decide(p[i]));
  return evaluate(pred, labels_of(d), task).overall_accuracy;
}

std::vector<int> top3(const Eigen::VectorXd& importance) {
  std::vector<int> idx(static_cast<std::size_t>(importance.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return importance[a] > importance[b]; });
  idx.resize(3);
  return idx;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

}  // namespace

int main() {
  const fs::path work = testing::temp_dir("acceptance");

  criterion("cosine oracle suite", 5, [] {
    std::mt19937_64 rng(1);
    double worst = 0;
    bool invariants = true;
    for (int dim : {2, 512, 768}) {
      for (int i = 0; i < 1000; ++i) {
        const Embedding a = testing::random_embedding(dim, rng), b = testing::random_embedding(dim, rng);
        const double c = cosine(a, b);
        worst = std::max(worst, std::abs(c - testing::naive_cosine(a, b)));
        invariants &= c >= -1.0 && c <= 1.0;
        const Embedding a3 = a * 3.5f;
        invariants &= std::abs(cosine(a3, b) - c) <= 1e-6;
        invariants &= std::abs(cosine(Embedding(-a), b) + c) <= 1e-12;
        invariants &= std::abs(cosine(b, a) - c) <= 1e-12;
        invariants &= std::abs(cosine(a, a) - 1.0) <= 1e-6;
      }
    }
    return Outcome{worst <= 1e-6 && invariants, fmt("max |lib - naive| = %.2e over 3000 pairs", worst)};
  });

  criterion("re-ranking equivalence", 5, [] {
    std::mt19937_64 rng(2);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
      const Sample s = testing::random_sample("r", 64, rng() % 20, rng() % 20, rng);
      const RankedEvidence r = rerank_evidence(s);
      auto brute = [](const Embedding& q, const std::vector<Embedding>& cands) -> std::optional<std::size_t> {
        if (cands.empty()) return std::nullopt;
        std::size_t best = 0;
        double best_score = testing::naive_cosine(q, cands[0]);
        for (std::size_t k = 1; k < cands.size(); ++k) {
          const double sc = testing::naive_cosine(q, cands[k]);
          if (sc > best_score) best = k, best_score = sc;
        }
        return best;
      };
      mismatches += r.image_index != brute(s.image, s.image_evidence);
      mismatches += r.text_index != brute(s.text, s.text_evidence);
    }
    return Outcome{mismatches == 0, fmt("%.0f mismatches over 1000 samples", mismatches)};
  });

  const fs::path synth = work / "synth";
  criterion("synthetic calibration", 30, [&] {
    if (run_cli({"synth", "--preset", "newsclippings", "--n", "2000", "--out", synth.string()}) != 0) {
      return Outcome{false, "synth command failed"};
    }
    const DistributionReport r = distribution_report(featurize_dataset(merged(synth)));
    const double want[2][3] = {{0.27, 0.91, 0.63}, {0.19, 0.69, 0.32}};
    const std::size_t comp[3] = {0, 1, 4};
    double worst = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < 3; ++k) {
        worst = std::max(worst, std::abs(r.per_class[c][comp[k]].median - want[c][k]));
      }
    }
    return Outcome{worst <= 0.05 && r.classes.size() == 2,
                   fmt("max |median - target| = %.4f (true pair/img_img/txt_txt %.3f/%.3f/%.3f)", worst,
                       r.per_class[0][0].median, r.per_class[0][1].median, r.per_class[0][4].median)};
  });

  criterion("classifier separability", 120, [&] {
    const Dataset train = load_dataset(synth / "train"), val = load_dataset(synth / "val"),
                  test = load_dataset(synth / "test");
    TrainOptions o;
    o.kind = ModelKind::RandomForest;
    const Classifier rf = train_classifier(train, &val, o);
    o.kind = ModelKind::Mlp;
    const Classifier mlp = train_classifier(train, &val, o);
    o.kind = ModelKind::DecisionTree;
    const Classifier dt = train_classifier(train, &val, o);
    const double a_rf = accuracy_of(rf, test, Task::All), a_mlp = accuracy_of(mlp, test, Task::All);
    const std::vector<int> want{0, 1, 4};
    const auto rf_top = top3(feature_importance(std::get<ForestModel>(rf.model)));
    const auto dt_top = top3(feature_importance(std::get<DecisionTree>(dt.model)));
    const bool ok = a_rf >= 0.85 && a_mlp >= 0.85 && rf_top == want && dt_top == want;
    return Outcome{ok, fmt("RF %.4f, MLP %.4f, DT %.4f; ", a_rf, a_mlp, accuracy_of(dt, test, Task::All)) +
                           "top-3 RF " + component_names()[static_cast<std::size_t>(rf_top[0])] + "," +
                           component_names()[static_cast<std::size_t>(rf_top[1])] + "," +
                           component_names()[static_cast<std::size_t>(rf_top[2])] + " DT " +
                           component_names()[static_cast<std::size_t>(dt_top[0])] + "," +
                           component_names()[static_cast<std::size_t>(dt_top[1])] + "," +
                           component_names()[static_cast<std::size_t>(dt_top[2])]};
  });

  criterion("gradient checks", 120, [] {
    // MLP
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    Eigen::MatrixXd X(8, 6);
    Eigen::VectorXi y(8);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
    for (int i = 0; i < 8; ++i) y[i] = i % 2;
    MlpParams<double> p = init_mlp<double>(6, 16, 4);
    p.input_mean = X.colwise().mean().transpose();
    p.input_scale = Eigen::VectorXd::Constant(6, 1.3);
    MlpParams<double> g;
    mlp_loss_and_gradient(p, X, y, g);
    double mlp_worst = 0;
    {
      auto pt = tensors_of<double>(p);
      auto gt = tensors_of<double>(g);
      MlpParams<double> scratch;
      for (std::size_t t = 0; t < pt.size(); ++t) {
        for (Eigen::Index i = 0; i < pt[t].size; ++i) {
          double& w = pt[t].data[i];
          const double saved = w;
          w = saved + 1e-5;
          const double up = mlp_loss_and_gradient(p, X, y, scratch);
          w = saved - 1e-5;
          const double down = mlp_loss_and_gradient(p, X, y, scratch);
          w = saved;
          mlp_worst = std::max(mlp_worst, rel_err(gt[t].data[i], (up - down) / 2e-5));
        }
      }
    }
    // AITR, every pooling mode, dropout 0, 2-sample batch
    double aitr_worst = 0;
    for (Pooling pooling : {Pooling::Attention, Pooling::Max, Pooling::Weighted, Pooling::None}) {
      AitrConfig c;
      c.n_layers = 2;
      c.heads = {1, 2};
      c.ff_width = 12;
      c.dim = 8;
      c.dropout = 0.0;
      c.pooling = pooling;
      c.positional = true;
      AitrParams<double> q = init_aitr(c).cast<double>();
      q.for_each_tensor([&](const std::string& name, auto& t) {
        if (name.find("ln") != std::string::npos || name == "pool_logits") {
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.3 * n(rng);
        }
      });
      std::vector<AitrExample<double>> xs(2);
      for (auto& ex : xs) {
        ex.tokens = Eigen::MatrixXd(7, 8);
        for (Eigen::Index i = 0; i < ex.tokens.size(); ++i) ex.tokens.data()[i] = n(rng);
        for (int j = 0; j < 6; ++j) ex.muse[j] = std::tanh(n(rng));
      }
      xs[1].target = 1;
      const std::vector<const AitrExample<double>*> batch{&xs[0], &xs[1]};
      AitrParams<double> grad, scratch;
      aitr_loss_and_gradient(q, c, batch, grad);
      auto qt = tensors_of<double>(q);
      auto gt = tensors_of<double>(grad);
      for (std::size_t t = 0; t < qt.size(); ++t) {
        for (Eigen::Index i = 0; i < qt[t].size; ++i) {
          double& w = qt[t].data[i];
          const double saved = w;
          w = saved + 1e-5;
          const double up = aitr_loss_and_gradient(q, c, batch, scratch);
          w = saved - 1e-5;
          const double down = aitr_loss_and_gradient(q, c, batch, scratch);
          w = saved;
          aitr_worst = std::max(aitr_worst, rel_err(gt[t].data[i], (up - down) / 2e-5));
        }
      }
    }
    return Outcome{mlp_worst < 1e-4 && aitr_worst < 1e-3,
                   fmt("max relative error MLP %.2e (< 1e-4), AITR %.2e (< 1e-3)", mlp_worst, aitr_worst)};
  });

  criterion("AITR ablation ordering", 1800, [] {
    const std::vector<AitrVariant> variants{{Pooling::Attention, true}, {Pooling::None, true}, {Pooling::Attention, false}};
    std::array<double, 3> sum{};
    std::string per_seed;
    for (std::uint64_t s = 0; s < 3; ++s) {
      SyntheticConfig sc = newsclippings_preset();
      sc.dim = 32;
      sc.n_per_class = 2000;
      sc.seed = 100 + s;
      const auto train = encode_dataset(generate_synthetic(sc));
      sc.n_per_class = 500;
      sc.seed = 200 + s;
      const auto val = encode_dataset(generate_synthetic(sc));
      AitrConfig base;
      base.dim = 32;
      base.ff_width = 64;
      base.lr = 1e-3;
      base.batch_size = 64;
      base.max_epochs = 30;
      base.patience = 5;
      const auto rows = aitr_ablation(train, val, variants, base,
                                      [](const AitrConfig& c) { return default_grid(c, {1e-3}, {64}); }, {s});
      for (std::size_t v = 0; v < 3; ++v) sum[v] += rows[v].mean_validation;
      per_seed += fmt(" seed %.0f: %.4f/%.4f/%.4f;", static_cast<double>(s), rows[0].mean_validation,
                      rows[1].mean_validation, rows[2].mean_validation);
    }
    for (double& x : sum) x /= 3.0;
    return Outcome{sum[0] > sum[1] && sum[0] > sum[2],
                   fmt("mean val acc attention+muse %.4f, none+muse %.4f, attention-nomuse %.4f;", sum[0], sum[1],
                       sum[2]) + per_seed};
  });

  criterion("limited-data robustness", 300, [&] {
    const Dataset train = load_dataset(synth / "train"), test = load_dataset(synth / "test");
    auto fit_eval = [&](const Dataset& sub, std::uint64_t seed) {
      TrainOptions o;
      o.fit.seed = seed;
      return accuracy_of(train_classifier(sub, nullptr, o), test, Task::All);
    };
    const auto curve = limited_data_curve(train, {1.0, 0.01}, {0, 1, 2}, fit_eval);
    const double gap = curve[0].mean_accuracy - curve[1].mean_accuracy;
    return Outcome{gap <= 0.10, fmt("RF 100%% %.4f, 1%% (%.0f samples) %.4f, gap %.2f points", curve[0].mean_accuracy,
                                    static_cast<double>(curve[1].train_size), curve[1].mean_accuracy, 100 * gap)};
  });

  criterion("generalization-failure reproduction", 600, [&] {
    const Dataset train = load_dataset(synth / "train"), val = load_dataset(synth / "val");
    SyntheticConfig vc = verite_preset();
    vc.seed = 7;
    const Dataset verite = generate_synthetic(vc);
    TrainOptions o;
    o.kind = ModelKind::Mlp;
    const Classifier mlp = train_classifier(train, &val, o);
    const double ooc = accuracy_of(mlp, verite, Task::TrueVsOOC);
    const double mis = accuracy_of(mlp, verite, Task::TrueVsMiscaptioned);
    return Outcome{ooc >= 0.75 && mis <= 0.60,
                   fmt("MUSE-MLP on VERITE-calibrated data: true vs OOC %.4f (>= 0.75), true vs miscaptioned %.4f "
                       "(<= 0.60)", ooc, mis)};
  });

  criterion("OOD-CV protocol", 5, [] {
    // 6 truthful, 12 OOC, 3 miscaptioned -> folds of 2/4/1 per class
    std::vector<Label> labels;
    for (int i = 0; i < 21; ++i) labels.push_back(i < 6 ? Label::Truthful : i < 18 ? Label::OOC : Label::Miscaptioned);
    const std::uint64_t seed = 11;
    // independent fold construction from the same shuffled order
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0xF01D));
    shuffle_in_place(order, rng);
    std::vector<std::vector<std::size_t>> expected(3);
    std::map<Label, int> seen;
    for (std::size_t i : order) expected[static_cast<std::size_t>(seen[labels[i]]++ % 3)].push_back(i);
    for (auto& f : expected) std::sort(f.begin(), f.end());

    const double val[3][3] = {{0.5, 0.75, 0.25}, {0.75, 0.75, 0.5}, {0.75, 0.5, 0.75}};
    const double test[3][3] = {{0.25, 0.25, 0.25}, {0.5, 0.75, 1.0}, {0.0, 0.0, 0.0}};
    bool assignments_ok = true;
    auto cell = [&](std::size_t c, const std::vector<std::size_t>& v, const std::vector<std::size_t>& t) {
      int f = -1;
      for (int k = 0; k < 3; ++k) {
        if (expected[static_cast<std::size_t>(k)] == v) f = k;
      }
      std::vector<std::size_t> rest;
      for (int k = 0; k < 3; ++k) {
        if (k != f) rest.insert(rest.end(), expected[static_cast<std::size_t>(k)].begin(), expected[static_cast<std::size_t>(k)].end());
      }
      std::sort(rest.begin(), rest.end());
      assignments_ok &= f >= 0 && rest == t;
      if (f < 0) f = 0;
      return FoldScores{val[c][f], test[c][f]};
    };
    const OodCvReport r = ood_cv(3, labels, cell, 3, seed);
    // mean validation 0.5, 2/3, 2/3 -> config 1 (first of the tie); tests 0.5, 0.75, 1.0
    const double want_std = std::sqrt((0.0625 + 0.0 + 0.0625) / 3.0);
    bool stratified = true;
    for (const auto& f : r.folds) {
      std::map<Label, int> counts;
      for (std::size_t i : f) ++counts[labels[i]];
      stratified &= counts[Label::Truthful] == 2 && counts[Label::OOC] == 4 && counts[Label::Miscaptioned] == 1;
    }
    const bool ok = r.folds == expected && assignments_ok && stratified && r.chosen == 1 && r.test_mean == 0.75 &&
                    r.test_std == want_std;
    return Outcome{ok, fmt("chosen config %.0f, test mean %.4f, std %.6f (expected 1, 0.75, %.6f)",
                           static_cast<double>(r.chosen), r.test_mean, r.test_std, want_std)};
  });

  criterion("determinism", 600, [&] {
    std::vector<std::string> mismatches;
    const fs::path runs[2] = {work / "det_a", work / "det_b"};
    for (const fs::path& root : runs) {
      const std::string r = root.string();
      const std::vector<std::vector<std::string>> steps{
          {"synth", "--n", "200", "--dim", "16", "--seed", "4", "--out", r + "/data"},
          {"synth", "--preset", "verite", "--n", "30", "--dim", "16", "--seed", "5", "--out", r + "/verite"},
          {"train", "--model", "dt", "--train", r + "/data/train", "--out", r + "/dt"},
          {"train", "--model", "rf", "--trees", "20", "--train", r + "/data/train", "--out", r + "/rf"},
          {"train", "--model", "mlp", "--epochs", "20", "--train", r + "/data/train", "--val", r + "/data/val",
           "--out", r + "/mlp"},
          {"train", "--model", "aitr", "--ff-width", "32", "--aitr-batch-size", "32", "--max-epochs", "3",
           "--aitr-lr", "1e-3", "--train", r + "/data/train", "--val", r + "/data/val", "--out", r + "/aitr"},
          {"eval", "--model", r + "/rf", "--test", r + "/verite/external", "--out", r + "/eval_rf"},
          {"eval", "--model", r + "/aitr", "--test", r + "/data/test", "--out", r + "/eval_aitr"},
          {"oodcv", "--model", "mlp", "--epochs", "10", "--lr", "1e-3,3e-3", "--train", r + "/data/train",
           "--external", r + "/verite/external", "--out", r + "/oodcv"},
          {"curve", "--model", "rf", "--trees", "10", "--fractions", "1,0.1", "--train", r + "/data/train", "--test",
           r + "/data/test", "--out", r + "/curve"},
          {"ablate-muse", "--epochs", "5", "--seeds", "0", "--train", r + "/data/train", "--val", r + "/data/val",
           "--test", r + "/data/test", "--out", r + "/ablate"},
          {"analyze", "--data", r + "/data/train", "--out", r + "/analyze"}};
      for (const auto& s : steps) {
        if (run_cli(s) != 0) return Outcome{false, "command failed: " + s.front()};
      }
    }
    std::size_t checked = 0;
    for (const char* sub : {"data", "verite", "dt", "rf", "mlp", "aitr", "eval_rf", "eval_aitr", "oodcv", "curve",
                            "ablate", "analyze"}) {
      std::string why;
      if (!same_tree(runs[0] / sub, runs[1] / sub, why)) mismatches.push_back(std::string(sub) + "/" + why);
      ++checked;
    }
    std::string detail = std::to_string(checked) + " pipeline outputs compared byte-for-byte";
    for (const auto& m : mismatches) detail += "; differs: " + m;
    return Outcome{mismatches.empty(), detail};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
