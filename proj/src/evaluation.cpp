#include "muse/evaluation.hpp"

#include "muse/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace muse {

using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<std::size_t> indices_with_label(const std::vector<Label>& labels, const std::vector<std::size_t>& rows,
                                            Task task) {
  std::vector<std::size_t> out;
  for (std::size_t r : rows) {
    if (binary_target(labels[r], task)) out.push_back(r);
  }
  return out;
}

}  // namespace

EvalReport evaluate(const std::vector<int>& predictions, const std::vector<Label>& labels, Task task) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::ShapeError, "predictions and labels differ in length");
  }
  EvalReport r;
  r.task = task;
  std::array<std::array<std::int64_t, 2>, kNumLabels> counts{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto target = binary_target(labels[i], task);
    if (!target) continue;
    const int p = predictions[i] ? 1 : 0;
    ++counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(p)];
    correct += p == *target;
    ++r.n;
  }
  if (r.n == 0) throw Error(ErrorKind::EmptyAfterFilter, "no samples left for task " + std::string(task_name(task)));
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const std::int64_t total = counts[c][0] + counts[c][1];
    if (total == 0) continue;
    const auto label = static_cast<Label>(c);
    r.classes.push_back(label);
    const int target = *binary_target(label, Task::All);
    r.per_class_accuracy.push_back(static_cast<double>(counts[c][static_cast<std::size_t>(target)]) /
                                   static_cast<double>(total));
  }
  r.confusion.resize(static_cast<Eigen::Index>(r.classes.size()), 2);
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    const auto& row = counts[static_cast<std::size_t>(r.classes[i])];
    r.confusion(static_cast<Eigen::Index>(i), 0) = row[0];
    r.confusion(static_cast<Eigen::Index>(i), 1) = row[1];
  }
  return r;
}

std::vector<Label> labels_of(const Dataset& dataset) {
  std::vector<Label> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) out.push_back(s.label);
  return out;
}

json to_json(const EvalReport& r) {
  json per_class = json::object();
  json confusion = json::object();
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    const std::string name(label_name(r.classes[i]));
    per_class[name] = r.per_class_accuracy[i];
    confusion[name] = {r.confusion(static_cast<Eigen::Index>(i), 0), r.confusion(static_cast<Eigen::Index>(i), 1)};
  }
  return {{"schema_version", kReportSchemaVersion},
          {"task", task_name(r.task)},
          {"n", r.n},
          {"overall_accuracy", r.overall_accuracy},
          {"per_class_accuracy", per_class},
          {"confusion_columns", {"pred_true", "pred_falsified"}},
          {"confusion", confusion}};
}

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<Label>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "need at least 2 folds");
  std::array<std::size_t, kNumLabels> per_class{};
  for (Label l : labels) ++per_class[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    if (per_class[c] > 0 && per_class[c] < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::InvalidDataset, "class '" + std::string(label_name(static_cast<Label>(c))) +
                                                 "' has fewer than " + std::to_string(k) + " samples");
    }
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xF01D));
  shuffle_in_place(order, rng);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::array<std::size_t, kNumLabels> next{};
  for (std::size_t i : order) {
    auto& slot = next[static_cast<std::size_t>(labels[i])];
    folds[slot % static_cast<std::size_t>(k)].push_back(i);
    ++slot;
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

OodCvReport ood_cv(std::size_t n_configs, const std::vector<Label>& external_labels, const OodCvCell& cell, int k,
                   std::uint64_t seed) {
  if (n_configs == 0) throw Error(ErrorKind::InvalidConfig, "empty grid");
  OodCvReport report;
  report.k = k;
  report.folds = stratified_folds(external_labels, k, seed);
  bool any = false;
  for (std::size_t c = 0; c < n_configs; ++c) {
    OodCvConfigResult result;
    try {
      for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> test;
        for (int g = 0; g < k; ++g) {
          if (g != f) test.insert(test.end(), report.folds[static_cast<std::size_t>(g)].begin(),
                                  report.folds[static_cast<std::size_t>(g)].end());
        }
        std::sort(test.begin(), test.end());
        const FoldScores s = cell(c, report.folds[static_cast<std::size_t>(f)], test);
        result.validation_scores.push_back(s.validation);
        result.test_scores.push_back(s.test);
      }
      result.mean_validation = mean_of(result.validation_scores);
      if (!any || result.mean_validation > report.configs[report.chosen].mean_validation) {
        report.chosen = c;
        any = true;
      }
    } catch (const Error& e) {
      result.failed = true;
      result.error = e.what();
    }
    report.configs.push_back(std::move(result));
  }
  if (!any) throw Error(ErrorKind::Diverged, "every OOD-CV configuration failed");
  report.test_mean = mean_of(report.configs[report.chosen].test_scores);
  report.test_std = population_std(report.configs[report.chosen].test_scores);
  return report;
}

OodCvReport ood_cv_classifiers(const Dataset& train, const Dataset& external, const std::vector<TrainOptions>& grid,
                               Task task, int k, std::uint64_t seed) {
  const std::vector<Label> labels = labels_of(external);
  auto score = [&](const std::vector<int>& pred, const std::vector<std::size_t>& rows) {
    std::vector<int> p;
    std::vector<Label> l;
    for (std::size_t r : indices_with_label(labels, rows, task)) {
      p.push_back(pred[r]);
      l.push_back(labels[r]);
    }
    return evaluate(p, l, task).overall_accuracy;
  };
  // tree models ignore the validation fold, so one fit serves every fold
  std::vector<std::optional<std::vector<int>>> cached(grid.size());
  auto cell = [&](std::size_t c, const std::vector<std::size_t>& val_rows, const std::vector<std::size_t>& test_rows) {
    const TrainOptions& opt = grid[c];
    const bool uses_val = opt.kind == ModelKind::Mlp || opt.kind == ModelKind::Aitr;
    std::vector<int> pred;
    if (!uses_val && cached[c]) {
      pred = *cached[c];
    } else {
      const Dataset val = select(external, indices_with_label(labels, val_rows, task));
      pred = predict_labels(train_classifier(train, &val, opt), external);
      if (!uses_val) cached[c] = pred;
    }
    return FoldScores{score(pred, val_rows), score(pred, test_rows)};
  };
  return ood_cv(grid.size(), labels, cell, k, seed);
}

json to_json(const OodCvReport& r) {
  json configs = json::array();
  for (const auto& c : r.configs) {
    configs.push_back({{"failed", c.failed},
                       {"error", c.error},
                       {"validation_scores", c.validation_scores},
                       {"test_scores", c.test_scores},
                       {"mean_validation", c.mean_validation}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"k", r.k},
          {"fold_sizes", [&] {
             std::vector<std::size_t> s;
             for (const auto& f : r.folds) s.push_back(f.size());
             return s;
           }()},
          {"configs", configs},
          {"chosen", r.chosen},
          {"test_mean", r.test_mean},
          {"test_std", r.test_std},
          {"std_over", "folds"}};
}

Dataset stratified_subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidConfig, "fraction must lie in (0, 1]");
  std::array<std::vector<std::size_t>, kNumLabels> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.samples[i].label)].push_back(i);
  }
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(std::llround(fraction * 1e9))));
  std::vector<std::size_t> keep;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    ++classes;
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    if (take == 0) {
      throw Error(ErrorKind::FractionTooSmall, "fraction " + std::to_string(fraction) + " leaves no '" +
                                                   std::string(label_name(static_cast<Label>(c))) + "' samples");
    }
    if (take < rows.size()) shuffle_in_place(rows, rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
  }
  if (classes < 2) throw Error(ErrorKind::FractionTooSmall, "subsample needs at least two classes");
  std::sort(keep.begin(), keep.end());
  return select(dataset, keep);
}

std::vector<CurvePoint> limited_data_curve(const Dataset& train, const std::vector<double>& fractions,
                                           const std::vector<std::uint64_t>& seeds, const FitEvalFn& fit_eval) {
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "need at least one seed");
  std::vector<CurvePoint> curve;
  for (double f : fractions) {
    CurvePoint p;
    p.fraction = f;
    for (std::uint64_t s : seeds) {
      const Dataset sub = stratified_subsample(train, f, s);
      p.train_size = sub.size();
      p.accuracies.push_back(fit_eval(sub, s));
    }
    p.mean_accuracy = mean_of(p.accuracies);
    curve.push_back(std::move(p));
  }
  return curve;
}

std::vector<std::vector<int>> default_muse_subsets() {
  return {{0},          {1},          {2},       {3},          {4},
          {5},          {1, 4},       {0, 4},    {0, 1},       {0, 1, 4},
          {0, 1, 4, 5}, {0, 1, 2, 3, 5}, {0, 2, 3, 4, 5}, {1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}};
}

std::vector<MuseAblationRow> muse_ablation(const std::vector<std::vector<int>>& subsets, const FeatureTable& train,
                                           const FeatureTable& val, const std::vector<NamedTest>& tests,
                                           const FitConfig& config) {
  std::vector<MuseAblationRow> rows(subsets.size());
  parallel_for(subsets.size(), [&](std::size_t i) {
    if (subsets[i].empty()) throw Error(ErrorKind::InvalidConfig, "empty component subset");
    ColumnSelection cols;
    cols.components = subsets[i];
    const TabularData tr = make_tabular(train, Task::All, cols);
    const TabularData va = make_tabular(val, Task::All, cols);
    Classifier c;
    c.kind = ModelKind::Mlp;
    c.columns = cols;
    c.model = fit_mlp(tr.X, tr.y, config, &va);
    MuseAblationRow& row = rows[i];
    row.components = subsets[i];
    auto accuracy = [&](const FeatureTable& table, Task task) {
      const Eigen::VectorXd p = predict_proba(c, table);
      std::vector<int> pred(static_cast<std::size_t>(p.size()));
      for (Eigen::Index r = 0; r < p.size(); ++r) pred[static_cast<std::size_t>(r)] = decide(p[r]);
      return evaluate(pred, table.labels, task).overall_accuracy;
    };
    row.validation_accuracy = accuracy(val, Task::All);
    for (const NamedTest& t : tests) row.test_accuracy.push_back(accuracy(*t.features, t.task));
  });
  return rows;
}

std::vector<AitrVariant> default_aitr_variants() {
  return {{Pooling::None, false},    {Pooling::None, true},     {Pooling::Attention, false},
          {Pooling::Max, true},      {Pooling::Weighted, true}, {Pooling::Attention, true}};
}

std::vector<AitrAblationRow> aitr_ablation(const std::vector<AitrExample<float>>& train,
                                           const std::vector<AitrExample<float>>& val,
                                           const std::vector<AitrVariant>& variants, const AitrConfig& base,
                                           const GridFn& grid, const std::vector<std::uint64_t>& seeds) {
  std::vector<AitrAblationRow> rows;
  for (const AitrVariant& v : variants) {
    AitrAblationRow row;
    row.variant = v;
    for (std::uint64_t s : seeds) {
      AitrConfig c = base;
      c.pooling = v.pooling;
      c.use_muse = v.use_muse;
      c.seed = s;
      GridResult r = grid_search(train, val, grid(c));
      row.validation_accuracy.push_back(r.cells[r.best].val_accuracy);
      row.chosen.push_back(r.cells[r.best].config);
      row.best_params.push_back(std::move(r.best_fit.params));
    }
    row.mean_validation = mean_of(row.validation_accuracy);
    rows.push_back(std::move(row));
  }
  return rows;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "quantile of no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

int histogram_bin(double value) {
  const int b = static_cast<int>(std::floor((value + 1.0) / 0.05));
  return std::clamp(b, 0, kHistogramBins - 1);
}

DistributionReport distribution_report(const FeatureTable& table) {
  DistributionReport r;
  std::array<std::array<std::vector<double>, kNumComponents>, kNumLabels> values;
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    const Eigen::Index row = static_cast<Eigen::Index>(i);
    for (int j = 0; j < static_cast<int>(kNumComponents); ++j) {
      if (!component_present(table, row, j)) continue;
      values[static_cast<std::size_t>(table.labels[i])][static_cast<std::size_t>(j)].push_back(table.features(row, j));
    }
  }
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    if (std::none_of(table.labels.begin(), table.labels.end(), [&](Label l) { return static_cast<std::size_t>(l) == c; })) {
      continue;
    }
    r.classes.push_back(static_cast<Label>(c));
    std::array<ComponentDistribution, kNumComponents> dists;
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      const auto& v = values[c][j];
      ComponentDistribution& d = dists[j];
      d.n = v.size();
      if (v.empty()) continue;
      d.median = quantile(v, 0.5);
      d.q1 = quantile(v, 0.25);
      d.q3 = quantile(v, 0.75);
      for (double x : v) ++d.histogram[static_cast<std::size_t>(histogram_bin(x))];
    }
    r.per_class.push_back(dists);
  }
  return r;
}

json to_json(const DistributionReport& r) {
  json classes = json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    json comps = json::object();
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      const auto& d = r.per_class[c][j];
      comps[component_names()[j]] = {
          {"n", d.n}, {"median", d.median}, {"q1", d.q1}, {"q3", d.q3}, {"histogram", d.histogram}};
    }
    classes[std::string(label_name(r.classes[c]))] = std::move(comps);
  }
  return {{"schema_version", kReportSchemaVersion},
          {"bin_width", 0.05},
          {"range", {-1.0, 1.0}},
          {"classes", std::move(classes)}};
}

void write_histogram_csv(const DistributionReport& r, const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      for (int b = 0; b < kHistogramBins; ++b) {
        char lo[16], hi[16];
        std::snprintf(lo, sizeof lo, "%.2f", -1.0 + 0.05 * b);
        std::snprintf(hi, sizeof hi, "%.2f", -1.0 + 0.05 * (b + 1));
        rows.push_back({std::string(label_name(r.classes[c])), component_names()[j], lo, hi,
                        std::to_string(r.per_class[c][j].histogram[static_cast<std::size_t>(b)])});
      }
    }
  }
  write_csv({"class", "component", "bin_lo", "bin_hi", "count"}, rows, path);
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

void write_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

std::string format_percent(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * accuracy);
  return buf;
}

}  // namespace muse
