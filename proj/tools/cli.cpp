#include "cli.hpp"

#include "muse/classifier.hpp"
#include "muse/evaluation.hpp"
#include "muse/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

namespace muse::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- option bundles --------------------------------------------------------

/// Options that accept several values expand into a Cartesian grid.
struct ModelOpts {
  std::string kind = "rf";
  std::string task = "all";
  std::vector<std::string> columns{"pair", "img_img", "txt_imgev", "img_txtev", "txt_txt", "ev_ev"};
  bool with_masks = false;
  std::uint64_t seed = 0;
  int patience = 10;
  // trees
  std::vector<int> max_depth{6};
  int min_leaf = 5;
  int n_trees = 100;
  int feature_subsample = 0;
  bool no_bootstrap = false;
  // mlp
  int hidden = 128;
  std::vector<double> lr{1e-3};
  double weight_decay = 0.01;
  int epochs = 100;
  int batch_size = 64;
  // aitr
  int layers = 4;
  std::vector<std::string> heads{"1,2,4,8"};
  std::vector<int> ff_width{2048};
  std::vector<double> aitr_lr{5e-5};
  double dropout = 0.1;
  std::string pooling = "attention";
  bool no_muse = false;
  bool positional = false;
  int aitr_batch_size = 512;
  int max_epochs = 50;
  bool full_grid = false;
};

struct Options {
  std::string command;
  fs::path out;
  // synth
  std::string preset = "newsclippings";
  std::size_t n_per_class = 2000;
  int dim = 64;
  double noise = 1.0;
  std::vector<double> split{0.8, 0.1, 0.1};
  std::string backbone = "synthetic";
  // data paths
  fs::path data, train, val, test, external, model;
  // evaluation
  std::vector<std::string> tasks;
  int k = 3;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> fractions{1.0, 0.5, 0.25, 0.1, 0.05, 0.01};
  std::vector<std::string> variants;
  ModelOpts m;
};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "expected a comma-separated integer list, got '" + text + "'");
    }
  }
  return out;
}

ColumnSelection parse_columns(const std::vector<std::string>& names, bool with_masks) {
  ColumnSelection cols;
  cols.components.clear();
  cols.with_masks = with_masks;
  for (const std::string& n : names) {
    const auto& all = component_names();
    auto it = std::find(all.begin(), all.end(), n);
    if (it != all.end()) {
      cols.components.push_back(static_cast<int>(it - all.begin()));
    } else if (n.size() == 1 && n[0] >= '0' && n[0] <= '5') {
      cols.components.push_back(n[0] - '0');
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown MUSE component '" + n + "'");
    }
  }
  return cols;
}

AitrConfig aitr_base(const ModelOpts& m) {
  AitrConfig c;
  c.n_layers = m.layers;
  c.heads = parse_int_list(m.heads.front());
  c.ff_width = m.ff_width.front();
  c.dropout = m.dropout;
  c.pooling = parse_pooling(m.pooling);
  c.use_muse = !m.no_muse;
  c.positional = m.positional;
  c.lr = m.aitr_lr.front();
  c.weight_decay = m.weight_decay;
  c.batch_size = m.aitr_batch_size;
  c.max_epochs = m.max_epochs;
  c.patience = m.patience;
  c.seed = m.seed;
  return c;
}

/// Expands the multi-valued AITR options around `base`; granular head
/// schedules are dropped for pooling None.
std::vector<AitrConfig> aitr_grid(const ModelOpts& m, const AitrConfig& base) {
  if (m.full_grid) return default_grid(base);
  std::vector<AitrConfig> grid;
  for (double lr : m.aitr_lr) {
    for (int z : m.ff_width) {
      for (const std::string& h : m.heads) {
        AitrConfig c = base;
        c.lr = lr;
        c.ff_width = z;
        c.heads = parse_int_list(h);
        c.n_layers = static_cast<int>(c.heads.size());
        const bool uniform = std::adjacent_find(c.heads.begin(), c.heads.end(), std::not_equal_to<>()) == c.heads.end();
        if (c.pooling == Pooling::None && !uniform && m.heads.size() > 1) continue;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

std::vector<TrainOptions> build_grid(const ModelOpts& m) {
  TrainOptions base;
  base.kind = parse_model_kind(m.kind);
  base.task = parse_task(m.task);
  base.columns = parse_columns(m.columns, m.with_masks);
  base.fit.max_depth = m.max_depth.front();
  base.fit.min_leaf_size = m.min_leaf;
  base.fit.n_trees = m.n_trees;
  base.fit.feature_subsample = m.feature_subsample;
  base.fit.bootstrap = !m.no_bootstrap;
  base.fit.mlp_hidden_width = m.hidden;
  base.fit.learning_rate = m.lr.front();
  base.fit.weight_decay = m.weight_decay;
  base.fit.epochs = m.epochs;
  base.fit.batch_size = m.batch_size;
  base.fit.patience = m.patience;
  base.fit.seed = m.seed;
  base.aitr = aitr_base(m);

  std::vector<TrainOptions> grid;
  switch (base.kind) {
    case ModelKind::DecisionTree:
    case ModelKind::RandomForest:
      for (int d : m.max_depth) {
        grid.push_back(base);
        grid.back().fit.max_depth = d;
      }
      break;
    case ModelKind::Mlp:
      for (double lr : m.lr) {
        grid.push_back(base);
        grid.back().fit.learning_rate = lr;
      }
      break;
    case ModelKind::Aitr:
      for (const AitrConfig& c : aitr_grid(m, base.aitr)) {
        grid.push_back(base);
        grid.back().aitr = c;
      }
      break;
  }
  if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "the option grid is empty");
  return grid;
}

json describe(const TrainOptions& o) {
  json j = {{"model", model_kind_name(o.kind)}, {"task", task_name(o.task)}, {"columns", o.columns.components}};
  if (o.kind == ModelKind::Aitr) {
    j["aitr"] = json::parse(aitr_config_json(o.aitr));
  } else {
    j["max_depth"] = o.fit.max_depth;
    j["min_leaf_size"] = o.fit.min_leaf_size;
    j["n_trees"] = o.fit.n_trees;
    j["learning_rate"] = o.fit.learning_rate;
    j["seed"] = o.fit.seed;
  }
  return j;
}

void add_model_options(CLI::App* sub, ModelOpts& m) {
  sub->add_option("--model,--model-kind", m.kind, "dt | rf | mlp | aitr")
      ->check(CLI::IsMember({"dt", "rf", "mlp", "aitr"}))
      ->capture_default_str();
  sub->add_option("--task", m.task, "rows used for training: true_vs_ooc | true_vs_miscaptioned | all")
      ->check(CLI::IsMember({"true_vs_ooc", "true_vs_miscaptioned", "all"}))
      ->capture_default_str();
  sub->add_option("--columns", m.columns, "MUSE components used by tabular models")->delimiter(',')->capture_default_str();
  sub->add_flag("--with-masks", m.with_masks, "append evidence-presence columns");
  sub->add_option("--seed", m.seed, "random seed")->capture_default_str();
  sub->add_option("--patience", m.patience, "early-stopping patience (epochs)")->capture_default_str();
  sub->add_option("--max-depth", m.max_depth, "tree depth, <= 0 for unbounded (grid)")->delimiter(',')->capture_default_str();
  sub->add_option("--min-leaf", m.min_leaf, "minimum samples per leaf")->capture_default_str();
  sub->add_option("--trees", m.n_trees, "forest size")->capture_default_str();
  sub->add_option("--feature-subsample", m.feature_subsample, "features per split, 0 for ceil(sqrt(p))")
      ->capture_default_str();
  sub->add_flag("--no-bootstrap", m.no_bootstrap, "fit forest trees on the full sample");
  sub->add_option("--hidden", m.hidden, "MLP hidden width")->capture_default_str();
  sub->add_option("--lr", m.lr, "MLP learning rate (grid)")->delimiter(',')->capture_default_str();
  sub->add_option("--weight-decay", m.weight_decay, "AdamW weight decay")->capture_default_str();
  sub->add_option("--epochs", m.epochs, "MLP epochs")->capture_default_str();
  sub->add_option("--batch-size", m.batch_size, "MLP batch size")->capture_default_str();
  sub->add_option("--layers", m.layers, "AITR encoder layers")->capture_default_str();
  sub->add_option("--heads", m.heads, "AITR heads per layer, e.g. 1,2,4,8 (grid: repeat)")->capture_default_str();
  sub->add_option("--ff-width", m.ff_width, "AITR feed-forward width (grid)")->delimiter(',')->capture_default_str();
  sub->add_option("--aitr-lr", m.aitr_lr, "AITR learning rate (grid)")->delimiter(',')->capture_default_str();
  sub->add_option("--dropout", m.dropout, "AITR dropout")->capture_default_str();
  sub->add_option("--pooling", m.pooling, "attention | max | weighted | none")
      ->check(CLI::IsMember({"attention", "max", "weighted", "none"}))
      ->capture_default_str();
  sub->add_flag("--no-muse", m.no_muse, "drop the MUSE token");
  sub->add_flag("--positional", m.positional, "learned positional embeddings");
  sub->add_option("--aitr-batch-size", m.aitr_batch_size, "AITR batch size")->capture_default_str();
  sub->add_option("--max-epochs", m.max_epochs, "AITR epoch limit")->capture_default_str();
  sub->add_flag("--full-grid", m.full_grid, "AITR: lr {1e-4,5e-5} x z {256,1024,2048} x four head schedules");
}

// ---- manifest --------------------------------------------------------------

std::string fnv1a_hex(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + file.string());
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

json hash_tree(const fs::path& root, const fs::path& skip = {}) {
  json out = json::object();
  if (fs::is_regular_file(root)) {
    out[root.filename().string()] = fnv1a_hex(root);
    return out;
  }
  if (!fs::is_directory(root)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path() != skip) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[fs::relative(f, root).generic_string()] = fnv1a_hex(f);
  return out;
}

void write_manifest(const Options& o, const CLI::App& app, int argc, const char* const* argv) {
  json inputs = json::object();
  for (const fs::path* p : {&o.data, &o.train, &o.val, &o.test, &o.external, &o.model}) {
    if (!p->empty()) inputs[p->string()] = hash_tree(*p);
  }
  const fs::path manifest = o.out / "run_manifest.json";
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::vector<std::string> args(argv, argv + argc);
  json j = {{"schema_version", kReportSchemaVersion},
            {"command", o.command},
            {"argv", args},
            {"seed", o.m.seed},
            {"config", app.config_to_str(true, false)},
            {"inputs", inputs},
            {"outputs", hash_tree(o.out, manifest)},
            {"created_utc", stamp}};
  write_json(j, manifest);
}

// ---- helpers ---------------------------------------------------------------

Dataset load(const fs::path& dir) { return load_dataset(dir); }

std::vector<Task> tasks_for(const Options& o) {
  std::vector<Task> out;
  for (const auto& t : o.tasks) out.push_back(parse_task(t));
  if (out.empty()) out = {Task::TrueVsOOC, Task::TrueVsMiscaptioned, Task::All};
  return out;
}

std::vector<int> decisions(const Eigen::VectorXd& proba) {
  std::vector<int> out(static_cast<std::size_t>(proba.size()));
  for (Eigen::Index i = 0; i < proba.size(); ++i) out[static_cast<std::size_t>(i)] = decide(proba[i]);
  return out;
}

/// Accuracy of `classifier` on the rows of `data` kept by `task`.
double task_accuracy(const Classifier& classifier, const Dataset& data, Task task) {
  return evaluate(decisions(predict_proba(classifier, data)), labels_of(data), task).overall_accuracy;
}

std::vector<AitrExample<float>> encode_for_task(const Dataset& d, Task task) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (binary_target(d.samples[i].label, task)) keep.push_back(i);
  }
  return encode_dataset(select(d, keep));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---- commands --------------------------------------------------------------

void cmd_synth(const Options& o, std::ostream& out) {
  std::optional<SyntheticConfig> cfg = preset_by_name(o.preset);
  if (!cfg) throw Error(ErrorKind::InvalidConfig, "unknown preset '" + o.preset + "'");
  cfg->n_per_class = o.n_per_class;
  cfg->dim = o.dim;
  cfg->noise_scale = o.noise;
  cfg->seed = o.m.seed;
  cfg->backbone_tag = o.backbone;
  Dataset data = generate_synthetic(*cfg);
  if (o.preset == "verite") {
    data.split = SplitTag::External;
    save_dataset(data, o.out / "external");
    out << "external: " << data.size() << " samples\n";
  } else {
    if (o.split.size() != 3) throw Error(ErrorKind::BadFractions, "--split needs three fractions");
    auto parts = split_dataset(data, {o.split[0], o.split[1], o.split[2]}, o.m.seed);
    const std::array<std::pair<SplitTag, const char*>, 3> names{
        {{SplitTag::Train, "train"}, {SplitTag::Val, "val"}, {SplitTag::Test, "test"}}};
    for (std::size_t i = 0; i < 3; ++i) {
      parts[i].split = names[i].first;
      save_dataset(parts[i], o.out / names[i].second);
      out << names[i].second << ": " << parts[i].size() << " samples\n";
    }
  }
  const DistributionReport dist = distribution_report(featurize_dataset(data));
  json medians = json::object();
  for (std::size_t c = 0; c < dist.classes.size(); ++c) {
    json row = json::object();
    for (std::size_t j = 0; j < kNumComponents; ++j) row[component_names()[j]] = dist.per_class[c][j].median;
    medians[std::string(label_name(dist.classes[c]))] = row;
  }
  write_json({{"schema_version", kReportSchemaVersion}, {"preset", o.preset}, {"medians", medians}},
             o.out / "summary.json");
}

void cmd_features(const Options& o, std::ostream& out) {
  const FeatureTable t = featurize_dataset(load(o.data));
  write_features_csv(t, o.out / "features.csv");
  out << "features: " << t.rows() << " rows\n";
}

void write_importance(const Classifier& c, const fs::path& path) {
  Eigen::VectorXd imp;
  if (const auto* t = std::get_if<DecisionTree>(&c.model)) imp = feature_importance(*t);
  if (const auto* f = std::get_if<ForestModel>(&c.model)) imp = feature_importance(*f);
  if (imp.size() == 0) return;
  std::vector<std::vector<std::string>> rows;
  json j = json::object();
  for (std::size_t i = 0; i < c.columns.components.size(); ++i) {
    const char* name = component_names()[static_cast<std::size_t>(c.columns.components[i])];
    j[name] = imp[static_cast<Eigen::Index>(i)];
    rows.push_back({name, fmt(imp[static_cast<Eigen::Index>(i)])});
  }
  write_json({{"schema_version", kReportSchemaVersion}, {"importance", j}}, path.string() + ".json");
  write_csv({"component", "importance"}, rows, path.string() + ".csv");
}

void cmd_train(const Options& o, std::ostream& out) {
  const Dataset train = load(o.train);
  std::optional<Dataset> val;
  if (!o.val.empty()) val = load(o.val);
  std::vector<TrainOptions> grid = build_grid(o.m);
  for (auto& g : grid) g.aitr.dim = static_cast<int>(train.dim());
  if (grid.size() > 1 && !val) throw Error(ErrorKind::InvalidConfig, "a grid of options needs --val for selection");

  std::optional<Classifier> best;
  TrainingHistory best_history;
  std::size_t best_index = 0;
  double best_score = -1.0;
  std::vector<std::vector<std::string>> grid_rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    TrainingHistory history;
    try {
      Classifier c = train_classifier(train, val ? &*val : nullptr, grid[i], &history);
      const double score = val ? task_accuracy(c, *val, grid[i].task) : 0.0;
      grid_rows.push_back({std::to_string(i), describe(grid[i]).dump(), fmt(score), ""});
      if (!best || score > best_score) {
        best = std::move(c);
        best_history = history;
        best_score = score;
        best_index = i;
      }
    } catch (const Error& e) {
      if (grid.size() == 1) throw;
      grid_rows.push_back({std::to_string(i), describe(grid[i]).dump(), "", e.what()});
    }
  }
  if (!best) throw Error(ErrorKind::Diverged, "every grid cell failed");
  save_classifier(*best, o.out / "model");
  if (grid.size() > 1) {
    for (auto& r : grid_rows) r[1] = "\"" + std::regex_replace(r[1], std::regex("\""), "\"\"") + "\"";
    write_csv({"cell", "options", "val_accuracy", "error"}, grid_rows, o.out / "grid.csv");
  }
  if (!best_history.epochs.empty()) write_history_csv(best_history, o.out / "history.csv");
  write_importance(*best, o.out / "importance");

  json report = {{"schema_version", kReportSchemaVersion}, {"chosen", describe(grid[best_index])}};
  if (val) {
    report["val_accuracy"] = best_score;
    out << "validation accuracy: " << fmt(best_score) << '\n';
  }
  if (!o.test.empty()) {
    const Dataset test = load(o.test);
    const EvalReport r = evaluate(decisions(predict_proba(*best, test)), labels_of(test), grid[best_index].task);
    report["test"] = to_json(r);
    out << "test accuracy: " << fmt(r.overall_accuracy) << '\n';
  }
  write_json(report, o.out / "train_report.json");
}

void cmd_eval(const Options& o, std::ostream& out) {
  const fs::path model_dir = fs::exists(o.model / "model.json") ? o.model : o.model / "model";
  const Classifier c = load_classifier(model_dir);
  const Dataset test = load(o.test);
  const Eigen::VectorXd proba = predict_proba(c, test);
  const std::vector<int> pred = decisions(proba);
  const std::vector<Label> labels = labels_of(test);
  json tasks = json::object();
  std::vector<std::vector<std::string>> table;
  const bool explicit_tasks = !o.tasks.empty();
  for (Task t : tasks_for(o)) {
    EvalReport r;
    try {
      r = evaluate(pred, labels, t);
    } catch (const Error& e) {
      if (explicit_tasks || e.kind() != ErrorKind::EmptyAfterFilter) throw;
      continue;
    }
    if (!explicit_tasks && t != Task::All && r.classes.size() < 2) continue;
    tasks[std::string(task_name(t))] = to_json(r);
    table.push_back({std::string(task_name(t)), format_percent(r.overall_accuracy)});
    out << task_name(t) << ": " << fmt(r.overall_accuracy) << '\n';
    if (t == Task::All) {
      for (std::size_t i = 0; i < r.classes.size(); ++i) {
        table.push_back({std::string(label_name(r.classes[i])), format_percent(r.per_class_accuracy[i])});
      }
    }
  }
  if (tasks.empty()) throw Error(ErrorKind::EmptyAfterFilter, "no task has samples in " + o.test.string());
  write_json({{"schema_version", kReportSchemaVersion}, {"model", model_kind_name(c.kind)}, {"tasks", tasks}},
             o.out / "report.json");
  write_csv({"row", "accuracy"}, table, o.out / "accuracy.csv");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < test.size(); ++i) {
    rows.push_back({test.samples[i].id, std::string(label_name(labels[i])),
                    fmt(proba[static_cast<Eigen::Index>(i)]), std::to_string(pred[i])});
  }
  write_csv({"id", "label", "p_falsified", "prediction"}, rows, o.out / "predictions.csv");
}

void cmd_oodcv(const Options& o, std::ostream& out) {
  const Dataset train = load(o.train);
  const Dataset external = load(o.external);
  const std::vector<TrainOptions> grid = build_grid(o.m);
  const Task task = o.tasks.empty() ? Task::TrueVsOOC : parse_task(o.tasks.front());
  const OodCvReport r = ood_cv_classifiers(train, external, grid, task, o.k, o.m.seed);
  json j = to_json(r);
  j["task"] = task_name(task);
  json configs = json::array();
  for (const auto& g : grid) configs.push_back(describe(g));
  j["grid"] = configs;
  write_json(j, o.out / "oodcv.json");
  write_csv({"model", "task", "test_mean", "test_std_over_folds"},
            {{o.m.kind, std::string(task_name(task)), format_percent(r.test_mean), format_percent(r.test_std)}},
            o.out / "oodcv.csv");
  out << "OOD-CV " << task_name(task) << ": " << fmt(r.test_mean) << " (std " << fmt(r.test_std) << ")\n";
}

void cmd_ablate_muse(const Options& o, std::ostream& out) {
  const FeatureTable train = featurize_dataset(load(o.train));
  const FeatureTable val = featurize_dataset(load(o.val));
  const FeatureTable test = featurize_dataset(load(o.test));
  std::optional<FeatureTable> external;
  std::vector<NamedTest> tests{{"test", &test, Task::All}};
  if (!o.external.empty()) {
    external = featurize_dataset(load(o.external));
    tests.push_back({"external_true_vs_ooc", &*external, Task::TrueVsOOC});
  }
  const auto subsets = default_muse_subsets();
  std::vector<std::vector<std::vector<double>>> acc(subsets.size());  // [subset][test][seed]
  std::vector<std::vector<double>> val_acc(subsets.size());
  for (std::uint64_t seed : o.seeds) {
    FitConfig cfg = build_grid(o.m).front().fit;
    cfg.seed = seed;
    const auto rows = muse_ablation(subsets, train, val, tests, cfg);
    for (std::size_t s = 0; s < rows.size(); ++s) {
      acc[s].resize(tests.size());
      for (std::size_t t = 0; t < tests.size(); ++t) acc[s][t].push_back(rows[s].test_accuracy[t]);
      val_acc[s].push_back(rows[s].validation_accuracy);
    }
  }
  std::vector<std::string> header(component_names().begin(), component_names().end());
  header.push_back("validation");
  for (const auto& t : tests) header.push_back(t.name);
  std::vector<std::vector<std::string>> rows;
  json jrows = json::array();
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    std::vector<std::string> row;
    for (int j = 0; j < static_cast<int>(kNumComponents); ++j) {
      row.push_back(std::count(subsets[s].begin(), subsets[s].end(), j) ? "x" : "-");
    }
    row.push_back(format_percent(mean(val_acc[s])));
    json jr = {{"components", subsets[s]}, {"validation", val_acc[s]}};
    for (std::size_t t = 0; t < tests.size(); ++t) {
      row.push_back(format_percent(mean(acc[s][t])));
      jr[tests[t].name] = acc[s][t];
    }
    rows.push_back(std::move(row));
    jrows.push_back(std::move(jr));
  }
  write_csv(header, rows, o.out / "muse_ablation.csv");
  write_json({{"schema_version", kReportSchemaVersion}, {"seeds", o.seeds}, {"rows", jrows}}, o.out / "muse_ablation.json");
  out << "MUSE ablation: " << subsets.size() << " subsets x " << o.seeds.size() << " seeds\n";
}

std::vector<AitrVariant> parse_variants(const std::vector<std::string>& names) {
  if (names.empty()) return default_aitr_variants();
  std::vector<AitrVariant> out;
  for (const std::string& n : names) {
    const auto sep = n.find('+');
    if (sep == std::string::npos) throw Error(ErrorKind::InvalidConfig, "variant must look like pooling+muse|nomuse");
    const std::string flag = n.substr(sep + 1);
    if (flag != "muse" && flag != "nomuse") throw Error(ErrorKind::InvalidConfig, "bad variant '" + n + "'");
    out.push_back({parse_pooling(n.substr(0, sep)), flag == "muse"});
  }
  return out;
}

void cmd_ablate_aitr(const Options& o, std::ostream& out) {
  const Dataset train_set = load(o.train);
  const auto train = encode_dataset(train_set);
  const auto val = encode_dataset(load(o.val));
  std::vector<std::pair<std::string, std::vector<AitrExample<float>>>> tests;
  if (!o.test.empty()) tests.emplace_back("test", encode_dataset(load(o.test)));
  if (!o.external.empty()) tests.emplace_back("external_true_vs_ooc", encode_for_task(load(o.external), Task::TrueVsOOC));
  AitrConfig base = aitr_base(o.m);
  base.dim = static_cast<int>(train_set.dim());
  const ModelOpts& m = o.m;
  const auto rows = aitr_ablation(train, val, parse_variants(o.variants), base,
                                  [&](const AitrConfig& c) { return aitr_grid(m, c); }, o.seeds);
  std::vector<std::string> header{"pooling", "muse", "validation"};
  for (const auto& t : tests) header.push_back(t.first);
  std::vector<std::vector<std::string>> csv;
  json jrows = json::array();
  for (const auto& r : rows) {
    std::vector<std::string> line{std::string(pooling_name(r.variant.pooling)), r.variant.use_muse ? "yes" : "no",
                                  format_percent(r.mean_validation)};
    json jr = {{"pooling", pooling_name(r.variant.pooling)},
               {"use_muse", r.variant.use_muse},
               {"validation", r.validation_accuracy}};
    json chosen = json::array();
    for (const auto& c : r.chosen) chosen.push_back(json::parse(aitr_config_json(c)));
    jr["chosen"] = chosen;
    for (const auto& [name, examples] : tests) {
      std::vector<double> acc;
      for (std::size_t s = 0; s < r.best_params.size(); ++s) acc.push_back(aitr_accuracy(r.best_params[s], r.chosen[s], examples));
      line.push_back(format_percent(mean(acc)));
      jr[name] = acc;
    }
    out << pooling_name(r.variant.pooling) << (r.variant.use_muse ? "+muse" : "+nomuse") << ": "
        << fmt(r.mean_validation) << '\n';
    csv.push_back(std::move(line));
    jrows.push_back(std::move(jr));
  }
  write_csv(header, csv, o.out / "aitr_ablation.csv");
  write_json({{"schema_version", kReportSchemaVersion}, {"seeds", o.seeds}, {"rows", jrows}}, o.out / "aitr_ablation.json");
}

void cmd_curve(const Options& o, std::ostream& out) {
  const Dataset train = load(o.train);
  const Dataset test = load(o.test);
  std::optional<Dataset> val;
  if (!o.val.empty()) val = load(o.val);
  const TrainOptions base = build_grid(o.m).front();
  const Task eval_task = o.tasks.empty() ? Task::All : parse_task(o.tasks.front());
  auto fit_eval = [&](const Dataset& sub, std::uint64_t seed) {
    TrainOptions opt = base;
    opt.fit.seed = seed;
    opt.aitr.seed = seed;
    const Classifier c = train_classifier(sub, val ? &*val : nullptr, opt);
    return task_accuracy(c, test, eval_task);
  };
  const auto curve = limited_data_curve(train, o.fractions, o.seeds, fit_eval);
  std::vector<std::string> header{"fraction", "train_size", "mean_accuracy"};
  for (auto s : o.seeds) header.push_back("seed_" + std::to_string(s));
  std::vector<std::vector<std::string>> rows;
  json jrows = json::array();
  for (const auto& p : curve) {
    std::vector<std::string> row{fmt(p.fraction), std::to_string(p.train_size), format_percent(p.mean_accuracy)};
    for (double a : p.accuracies) row.push_back(format_percent(a));
    rows.push_back(std::move(row));
    jrows.push_back({{"fraction", p.fraction}, {"train_size", p.train_size}, {"accuracies", p.accuracies},
                     {"mean_accuracy", p.mean_accuracy}});
    out << "fraction " << fmt(p.fraction) << ": " << fmt(p.mean_accuracy) << '\n';
  }
  write_csv(header, rows, o.out / "curve.csv");
  write_json({{"schema_version", kReportSchemaVersion}, {"model", o.m.kind}, {"points", jrows}}, o.out / "curve.json");
}

void cmd_analyze(const Options& o, std::ostream& out) {
  const DistributionReport r = distribution_report(featurize_dataset(load(o.data)));
  write_json(to_json(r), o.out / "distributions.json");
  write_histogram_csv(r, o.out / "histograms.csv");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      const auto& d = r.per_class[c][j];
      rows.push_back({std::string(label_name(r.classes[c])), component_names()[j], std::to_string(d.n), fmt(d.median),
                      fmt(d.q1), fmt(d.q3)});
    }
    out << label_name(r.classes[c]) << " medians:";
    for (std::size_t j = 0; j < kNumComponents; ++j) out << ' ' << fmt(r.per_class[c][j].median);
    out << '\n';
  }
  write_csv({"class", "component", "n", "median", "q1", "q3"}, rows, o.out / "medians.csv");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Evidence-based out-of-context detection from precomputed embeddings", "muse"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1, 1);

  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "output directory")->required(); };
  auto dir = [&](CLI::App* s, const char* name, fs::path& target, const char* help, bool required) {
    auto* opt = s->add_option(name, target, help)->check(CLI::ExistingPath);
    if (required) opt->required();
  };
  const std::map<std::string, std::string> commands{
      {"synth", "generate a calibrated synthetic dataset"},
      {"features", "featurize a dataset into MUSE vectors (CSV)"},
      {"train", "train a classifier (grid-selected on --val when options have several values)"},
      {"eval", "evaluate a trained model per task"},
      {"oodcv", "out-of-distribution cross-validation on an external set"},
      {"ablate-muse", "MUSE-MLP component-subset ablation"},
      {"ablate-aitr", "AITR pooling / MUSE-token ablation"},
      {"curve", "limited-data learning curve"},
      {"analyze", "per-class similarity distributions"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    s->callback([&o, n = name] { o.command = n; });
    add_out(s);
    subs[name] = s;
  }

  CLI::App* s = subs["synth"];
  s->add_option("--preset", o.preset, "newsclippings | verite")
      ->check(CLI::IsMember({"newsclippings", "verite"}))
      ->capture_default_str();
  s->add_option("--n", o.n_per_class, "samples per class")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--dim", o.dim, "embedding dimension")->capture_default_str();
  s->add_option("--noise", o.noise, "spread multiplier")->capture_default_str();
  s->add_option("--split", o.split, "train,val,test fractions")->delimiter(',')->capture_default_str();
  s->add_option("--backbone", o.backbone, "backbone tag written to the manifest")->capture_default_str();
  s->add_option("--seed", o.m.seed, "random seed")->capture_default_str();

  dir(subs["features"], "--data", o.data, "dataset directory", true);

  s = subs["train"];
  dir(s, "--train", o.train, "training dataset", true);
  dir(s, "--val", o.val, "validation dataset", false);
  dir(s, "--test", o.test, "optional test dataset", false);
  add_model_options(s, o.m);

  s = subs["eval"];
  dir(s, "--model", o.model, "output directory of train (or its model/ subdirectory)", true);
  dir(s, "--test", o.test, "test dataset", true);
  s->add_option("--eval-task", o.tasks, "tasks to report (default: every non-empty one)")
      ->check(CLI::IsMember({"true_vs_ooc", "true_vs_miscaptioned", "all"}));

  s = subs["oodcv"];
  dir(s, "--train", o.train, "source training dataset", true);
  dir(s, "--external", o.external, "external dataset split into folds", true);
  s->add_option("--k", o.k, "number of folds")->capture_default_str()->check(CLI::Range(2, 100));
  s->add_option("--eval-task", o.tasks, "scored task (default true_vs_ooc)")
      ->check(CLI::IsMember({"true_vs_ooc", "true_vs_miscaptioned", "all"}));
  add_model_options(s, o.m);

  s = subs["ablate-muse"];
  dir(s, "--train", o.train, "training dataset", true);
  dir(s, "--val", o.val, "validation dataset", true);
  dir(s, "--test", o.test, "test dataset", true);
  dir(s, "--external", o.external, "optional external dataset (scored true vs OOC)", false);
  s->add_option("--seeds", o.seeds, "seeds to average over")->delimiter(',')->capture_default_str();
  add_model_options(s, o.m);

  s = subs["ablate-aitr"];
  dir(s, "--train", o.train, "training dataset", true);
  dir(s, "--val", o.val, "validation dataset", true);
  dir(s, "--test", o.test, "optional test dataset", false);
  dir(s, "--external", o.external, "optional external dataset (scored true vs OOC)", false);
  s->add_option("--seeds", o.seeds, "seeds to average over")->delimiter(',')->capture_default_str();
  s->add_option("--variants", o.variants, "e.g. attention+muse none+nomuse (default: all six)");
  add_model_options(s, o.m);

  s = subs["curve"];
  dir(s, "--train", o.train, "training dataset", true);
  dir(s, "--test", o.test, "test dataset", true);
  dir(s, "--val", o.val, "validation dataset (MLP / AITR)", false);
  s->add_option("--fractions", o.fractions, "training fractions")->delimiter(',')->capture_default_str();
  s->add_option("--seeds", o.seeds, "seeds to average over")->delimiter(',')->capture_default_str();
  s->add_option("--eval-task", o.tasks, "scored task (default all)")
      ->check(CLI::IsMember({"true_vs_ooc", "true_vs_miscaptioned", "all"}));
  add_model_options(s, o.m);

  dir(subs["analyze"], "--data", o.data, "dataset directory", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto used = app.get_subcommands();
    err << (used.empty() ? app.help() : used.front()->help());
    return 1;
  }

  try {
    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + o.out.string() + ": " + ec.message());
    if (o.command == "synth") cmd_synth(o, out);
    else if (o.command == "features") cmd_features(o, out);
    else if (o.command == "train") cmd_train(o, out);
    else if (o.command == "eval") cmd_eval(o, out);
    else if (o.command == "oodcv") cmd_oodcv(o, out);
    else if (o.command == "ablate-muse") cmd_ablate_muse(o, out);
    else if (o.command == "ablate-aitr") cmd_ablate_aitr(o, out);
    else if (o.command == "curve") cmd_curve(o, out);
    else if (o.command == "analyze") cmd_analyze(o, out);
    write_manifest(o, app, argc, argv);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return is_validation_error(e.kind()) ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace muse::cli
