#pragma once

#include "muse/aitr_train.hpp"
#include "muse/classifier.hpp"
#include "muse/dataset.hpp"
#include "muse/similarity.hpp"
#include "muse/task.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace muse {

inline constexpr int kReportSchemaVersion = 1;

// ---- metrics ---------------------------------------------------------------

struct EvalReport {
  Task task = Task::All;
  std::size_t n = 0;
  double overall_accuracy = 0.0;
  std::vector<Label> classes;              // classes present after filtering
  std::vector<double> per_class_accuracy;  // recall of each class's binary target
  // rows follow `classes`, columns are the predicted binary label (0, 1)
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 2> confusion;
};

/// `predictions` are binary decisions (1 = falsified) aligned with `labels`.
/// Rows whose label the task filters out are ignored.
EvalReport evaluate(const std::vector<int>& predictions, const std::vector<Label>& labels, Task task);

std::vector<Label> labels_of(const Dataset& dataset);

nlohmann::json to_json(const EvalReport& report);

// ---- OOD cross-validation --------------------------------------------------

/// Stratified round-robin assignment after a seeded shuffle. Each fold is
/// sorted ascending. Requires at least k samples of every present class.
std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<Label>& labels, int k,
                                                       std::uint64_t seed);

struct FoldScores {
  double validation = 0.0;
  double test = 0.0;
};

/// Trains configuration `config_index`, checkpoints on `validation` rows of
/// the external set and scores on `test` rows.
using OodCvCell = std::function<FoldScores(std::size_t config_index, const std::vector<std::size_t>& validation,
                                           const std::vector<std::size_t>& test)>;

struct OodCvConfigResult {
  bool failed = false;
  std::string error;
  std::vector<double> validation_scores;  // per fold
  std::vector<double> test_scores;        // per fold
  double mean_validation = 0.0;
};

struct OodCvReport {
  int k = 3;
  std::vector<std::vector<std::size_t>> folds;
  std::vector<OodCvConfigResult> configs;
  std::size_t chosen = 0;  // highest mean validation score, first on ties
  double test_mean = 0.0;
  double test_std = 0.0;  // population std across folds
};

/// Fold f validates, the remaining folds are pooled for testing.
OodCvReport ood_cv(std::size_t n_configs, const std::vector<Label>& external_labels, const OodCvCell& cell, int k = 3,
                   std::uint64_t seed = 0);

/// ood_cv over classifier configurations trained on `train` and scored on
/// `external` under `task`.
OodCvReport ood_cv_classifiers(const Dataset& train, const Dataset& external, const std::vector<TrainOptions>& grid,
                               Task task, int k = 3, std::uint64_t seed = 0);

nlohmann::json to_json(const OodCvReport& report);

// ---- limited data ----------------------------------------------------------

/// Per-class llround(fraction * count) rows, original order kept. Throws
/// FractionTooSmall when a present class would vanish.
Dataset stratified_subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

struct CurvePoint {
  double fraction = 1.0;
  std::size_t train_size = 0;
  std::vector<double> accuracies;  // per seed
  double mean_accuracy = 0.0;
};

/// Fits on the subsample and returns test accuracy.
using FitEvalFn = std::function<double(const Dataset& train_subset, std::uint64_t seed)>;

std::vector<CurvePoint> limited_data_curve(const Dataset& train, const std::vector<double>& fractions,
                                           const std::vector<std::uint64_t>& seeds, const FitEvalFn& fit_eval);

// ---- MUSE component ablation ----------------------------------------------

/// The 15 component subsets of the MUSE-MLP ablation table, full set last.
std::vector<std::vector<int>> default_muse_subsets();

struct NamedTest {
  std::string name;
  const FeatureTable* features;
  Task task;
};

struct MuseAblationRow {
  std::vector<int> components;
  double validation_accuracy = 0.0;
  std::vector<double> test_accuracy;  // aligned with the NamedTest list
};

/// Trains MUSE-MLP on each subset (task All) with early stopping on `val`.
std::vector<MuseAblationRow> muse_ablation(const std::vector<std::vector<int>>& subsets, const FeatureTable& train,
                                           const FeatureTable& val, const std::vector<NamedTest>& tests,
                                           const FitConfig& config);

// ---- AITR ablation ---------------------------------------------------------

struct AitrVariant {
  Pooling pooling = Pooling::Attention;
  bool use_muse = true;
};

/// Rows of the AITR ablation table, in table order.
std::vector<AitrVariant> default_aitr_variants();

struct AitrAblationRow {
  AitrVariant variant;
  std::vector<double> validation_accuracy;  // per seed, best grid cell
  std::vector<AitrConfig> chosen;           // per seed
  std::vector<AitrParams<float>> best_params;  // per seed
  double mean_validation = 0.0;
};

using GridFn = std::function<std::vector<AitrConfig>(const AitrConfig& base)>;

/// For each variant and seed: grid search from `base` (pooling, use_muse
/// and seed overridden) and keep the best validation accuracy.
std::vector<AitrAblationRow> aitr_ablation(const std::vector<AitrExample<float>>& train,
                                           const std::vector<AitrExample<float>>& val,
                                           const std::vector<AitrVariant>& variants, const AitrConfig& base,
                                           const GridFn& grid, const std::vector<std::uint64_t>& seeds);

// ---- similarity distributions ---------------------------------------------

inline constexpr int kHistogramBins = 40;  // width 0.05 over [-1, 1]

struct ComponentDistribution {
  std::size_t n = 0;  // unmasked values
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::array<std::int64_t, kHistogramBins> histogram{};
};

struct DistributionReport {
  std::vector<Label> classes;
  std::vector<std::array<ComponentDistribution, kNumComponents>> per_class;
};

/// Linear-interpolation quantile of unsorted values.
double quantile(std::vector<double> values, double q);
int histogram_bin(double value);

/// Masked components are left out of their distribution.
DistributionReport distribution_report(const FeatureTable& table);

nlohmann::json to_json(const DistributionReport& report);
/// class,component,bin_lo,bin_hi,count rows for plotting.
void write_histogram_csv(const DistributionReport& report, const std::filesystem::path& path);

// ---- output ----------------------------------------------------------------

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
void write_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
               const std::filesystem::path& path);
std::string format_percent(double accuracy);  // 0.9016 -> "90.16"

}  // namespace muse
