#pragma once

#include "muse/aitr_train.hpp"
#include "muse/fit_config.hpp"
#include "muse/mlp.hpp"
#include "muse/tabular.hpp"
#include "muse/tree.hpp"

#include <filesystem>
#include <string_view>
#include <variant>

namespace muse {

enum class ModelKind { DecisionTree, RandomForest, Mlp, Aitr };

std::string_view model_kind_name(ModelKind kind);  // "dt" | "rf" | "mlp" | "aitr"
ModelKind parse_model_kind(std::string_view name);

struct AitrModel {
  AitrParams<float> params;
  AitrConfig config;
};

/// Any trained model behind one interface. Tabular kinds remember which
/// MUSE columns they were fitted on.
struct Classifier {
  ModelKind kind = ModelKind::RandomForest;
  ColumnSelection columns;
  std::variant<DecisionTree, ForestModel, MlpParams<double>, AitrModel> model;
};

struct TrainOptions {
  ModelKind kind = ModelKind::RandomForest;
  Task task = Task::All;  // rows kept for training
  ColumnSelection columns;
  FitConfig fit;
  AitrConfig aitr;
};

/// Trains on `train`; `val` drives early stopping for the MLP and AITR and
/// is ignored by the tree models. AITR dim is taken from the data.
Classifier train_classifier(const Dataset& train, const Dataset* val, const TrainOptions& options,
                            TrainingHistory* history = nullptr);

/// P(falsified) for every sample of `dataset`.
Eigen::VectorXd predict_proba(const Classifier& classifier, const Dataset& dataset);
/// Same from precomputed features (tabular kinds only).
Eigen::VectorXd predict_proba(const Classifier& classifier, const FeatureTable& features);

/// Binary decision per sample: 1 = falsified.
std::vector<int> predict_labels(const Classifier& classifier, const Dataset& dataset);

/// Writes model.json (plus aitr.bin for AITR) into `dir`.
void save_classifier(const Classifier& classifier, const std::filesystem::path& dir);
Classifier load_classifier(const std::filesystem::path& dir);

}  // namespace muse
