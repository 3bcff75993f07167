#include "muse/classifier.hpp"

#include <json.hpp>

#include <fstream>

namespace muse {

using nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;

std::vector<double> to_vector(const Eigen::MatrixXd& m) {
  // column-major flattening, shape stored separately
  return {m.data(), m.data() + m.size()};
}

json matrix_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", to_vector(m)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw Error(ErrorKind::MalformedRecord, "matrix data length does not match its shape");
  }
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

json tree_json(const DecisionTree& tree) {
  json nodes = json::array();
  for (const TreeNode& n : tree.nodes) {
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.class_counts[0], n.class_counts[1]});
  }
  return {{"n_features", tree.n_features}, {"nodes", std::move(nodes)}};
}

DecisionTree tree_from_json(const json& j) {
  DecisionTree tree;
  tree.n_features = j.at("n_features").get<int>();
  for (const auto& row : j.at("nodes")) {
    TreeNode n;
    n.feature = row.at(0).get<int>();
    n.threshold = row.at(1).get<double>();
    n.left = row.at(2).get<int>();
    n.right = row.at(3).get<int>();
    n.class_counts = {row.at(4).get<std::int64_t>(), row.at(5).get<std::int64_t>()};
    tree.nodes.push_back(n);
  }
  const int count = static_cast<int>(tree.nodes.size());
  for (const TreeNode& n : tree.nodes) {
    if (!n.is_leaf() && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count ||
                         n.feature >= tree.n_features)) {
      throw Error(ErrorKind::MalformedRecord, "tree node references are out of range");
    }
  }
  if (tree.nodes.empty()) throw Error(ErrorKind::MalformedRecord, "tree has no nodes");
  return tree;
}

TabularData all_rows(const FeatureTable& table, const ColumnSelection& columns) {
  return make_tabular(table, Task::All, columns);
}

void check_columns(const Classifier& c, const TabularData& data) {
  const auto p = [&]() -> Eigen::Index {
    return std::visit(
        [](const auto& m) -> Eigen::Index {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, DecisionTree> || std::is_same_v<M, ForestModel>) return m.n_features;
          else if constexpr (std::is_same_v<M, MlpParams<double>>) return m.inputs();
          else return -1;
        },
        c.model);
  }();
  if (p != data.n_features()) {
    throw Error(ErrorKind::ShapeError, "model expects " + std::to_string(p) + " features, got " +
                                           std::to_string(data.n_features()));
  }
}

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::DecisionTree: return "dt";
    case ModelKind::RandomForest: return "rf";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Aitr: return "aitr";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "dt") return ModelKind::DecisionTree;
  if (name == "rf") return ModelKind::RandomForest;
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "aitr") return ModelKind::Aitr;
  throw Error(ErrorKind::InvalidConfig, "unknown model kind '" + std::string(name) + "'");
}

Classifier train_classifier(const Dataset& train, const Dataset* val, const TrainOptions& options,
                            TrainingHistory* history) {
  Classifier c;
  c.kind = options.kind;
  c.columns = options.columns;
  if (options.kind == ModelKind::Aitr) {
    if (!val) throw Error(ErrorKind::InvalidConfig, "AITR training needs a validation set");
    AitrConfig config = options.aitr;
    if (train.samples.empty()) throw Error(ErrorKind::EmptyInput, "empty training set");
    config.dim = static_cast<int>(train.samples.front().dim());
    auto keep = [&](const Dataset& d) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (binary_target(d.samples[i].label, options.task)) idx.push_back(i);
      }
      return encode_dataset(select(d, idx));
    };
    AitrFit fit = train_aitr(keep(train), keep(*val), config);
    if (history) *history = fit.history;
    c.model = AitrModel{std::move(fit.params), config};
    return c;
  }

  const TabularData data = make_tabular(featurize_dataset(train), options.task, options.columns);
  if (data.size() == 0) throw Error(ErrorKind::EmptyAfterFilter, "no training rows for the task");
  switch (options.kind) {
    case ModelKind::DecisionTree:
      c.model = fit_tree(data.X, data.y, options.fit);
      break;
    case ModelKind::RandomForest:
      c.model = fit_forest(data.X, data.y, options.fit);
      break;
    case ModelKind::Mlp: {
      std::optional<TabularData> v;
      if (val) v = make_tabular(featurize_dataset(*val), options.task, options.columns);
      c.model = fit_mlp(data.X, data.y, options.fit, v && v->size() > 0 ? &*v : nullptr, history);
      break;
    }
    case ModelKind::Aitr:
      break;
  }
  return c;
}

Eigen::VectorXd predict_proba(const Classifier& classifier, const FeatureTable& features) {
  if (classifier.kind == ModelKind::Aitr) {
    throw Error(ErrorKind::InvalidConfig, "AITR predicts from embeddings, not feature tables");
  }
  const TabularData data = all_rows(features, classifier.columns);
  check_columns(classifier, data);
  Eigen::VectorXd out(data.size());
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, DecisionTree>) {
          for (Eigen::Index i = 0; i < data.size(); ++i) out[i] = predict_tree(m, data.X.row(i).transpose());
        } else if constexpr (std::is_same_v<M, ForestModel>) {
          for (Eigen::Index i = 0; i < data.size(); ++i) out[i] = predict_forest(m, data.X.row(i).transpose());
        } else if constexpr (std::is_same_v<M, MlpParams<double>>) {
          out = predict_mlp_batch(m, data.X);
        }
      },
      classifier.model);
  return out;
}

Eigen::VectorXd predict_proba(const Classifier& classifier, const Dataset& dataset) {
  if (const auto* aitr = std::get_if<AitrModel>(&classifier.model)) {
    const Eigen::VectorXf logits = aitr_logits(aitr->params, aitr->config, encode_dataset(dataset));
    return logits.cast<double>().unaryExpr([](double z) { return nn::sigmoid(z); });
  }
  return predict_proba(classifier, featurize_dataset(dataset));
}

std::vector<int> predict_labels(const Classifier& classifier, const Dataset& dataset) {
  if (const auto* aitr = std::get_if<AitrModel>(&classifier.model)) {
    // threshold the logit directly so float rounding in the sigmoid cannot flip a decision
    const Eigen::VectorXf logits = aitr_logits(aitr->params, aitr->config, encode_dataset(dataset));
    std::vector<int> out(static_cast<std::size_t>(logits.size()));
    for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = logits[i] >= 0.0f;
    return out;
  }
  const Eigen::VectorXd p = predict_proba(classifier, dataset);
  std::vector<int> out(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = decide(p[i]);
  return out;
}

void save_classifier(const Classifier& classifier, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = model_kind_name(classifier.kind);
  j["columns"] = classifier.columns.components;
  j["with_masks"] = classifier.columns.with_masks;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, DecisionTree>) {
          j["tree"] = tree_json(m);
        } else if constexpr (std::is_same_v<M, ForestModel>) {
          json trees = json::array();
          for (const auto& t : m.trees) trees.push_back(tree_json(t));
          j["forest"] = {{"trees", std::move(trees)},
                         {"per_tree_seeds", m.per_tree_seeds},
                         {"feature_subsample", m.feature_subsample},
                         {"bootstrap", m.bootstrap},
                         {"n_features", m.n_features}};
        } else if constexpr (std::is_same_v<M, MlpParams<double>>) {
          j["mlp"] = {{"w1", matrix_json(m.w1)},         {"b1", matrix_json(m.b1)},
                      {"w2", matrix_json(m.w2)},         {"b2", matrix_json(m.b2)},
                      {"input_mean", matrix_json(m.input_mean)}, {"input_scale", matrix_json(m.input_scale)}};
        } else {
          j["checkpoint"] = "aitr.bin";
          save_aitr_checkpoint(dir / "aitr.bin", m.params, m.config);
        }
      },
      classifier.model);
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + (dir / "model.json").string());
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + (dir / "model.json").string());
}

Classifier load_classifier(const std::filesystem::path& dir) {
  const auto path = dir / "model.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  Classifier c;
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorKind::MalformedRecord, path.string() + ": unsupported format_version");
    }
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.columns.components = j.at("columns").get<std::vector<int>>();
    c.columns.with_masks = j.at("with_masks").get<bool>();
    switch (c.kind) {
      case ModelKind::DecisionTree:
        c.model = tree_from_json(j.at("tree"));
        break;
      case ModelKind::RandomForest: {
        const json& f = j.at("forest");
        ForestModel m;
        for (const auto& t : f.at("trees")) m.trees.push_back(tree_from_json(t));
        m.per_tree_seeds = f.at("per_tree_seeds").get<std::vector<std::uint64_t>>();
        m.feature_subsample = f.at("feature_subsample").get<int>();
        m.bootstrap = f.at("bootstrap").get<bool>();
        m.n_features = f.at("n_features").get<int>();
        c.model = std::move(m);
        break;
      }
      case ModelKind::Mlp: {
        const json& m = j.at("mlp");
        MlpParams<double> p;
        p.w1 = matrix_from_json(m.at("w1"));
        p.b1 = matrix_from_json(m.at("b1"));
        p.w2 = matrix_from_json(m.at("w2"));
        p.b2 = matrix_from_json(m.at("b2"));
        p.input_mean = matrix_from_json(m.at("input_mean"));
        p.input_scale = matrix_from_json(m.at("input_scale"));
        if (p.b1.size() != p.hidden() || p.w2.size() != p.hidden() || p.b2.size() != 1 ||
            p.input_mean.size() != p.inputs() || p.input_scale.size() != p.inputs()) {
          throw Error(ErrorKind::MalformedRecord, path.string() + ": inconsistent MLP shapes");
        }
        c.model = std::move(p);
        break;
      }
      case ModelKind::Aitr: {
        auto [params, config] = load_aitr_checkpoint(dir / j.at("checkpoint").get<std::string>());
        c.model = AitrModel{std::move(params), config};
        break;
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": " + e.what());
  }
  return c;
}

}  // namespace muse
