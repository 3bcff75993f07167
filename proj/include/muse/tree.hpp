#pragma once

#include "muse/fit_config.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <vector>

namespace muse {

/// Flat CART node. Leaves have feature == -1. Splits send
/// x[feature] <= threshold to `left`.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::array<std::int64_t, 2> class_counts{};

  bool is_leaf() const { return feature < 0; }
  std::int64_t count() const { return class_counts[0] + class_counts[1]; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int n_features = 0;

  bool operator==(const DecisionTree&) const = default;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::vector<std::uint64_t> per_tree_seeds;
  int feature_subsample = 0;
  bool bootstrap = true;
  int n_features = 0;

  bool operator==(const ForestModel&) const = default;
};

/// Greedy CART growth minimizing weighted Gini impurity. Candidate
/// thresholds are midpoints between consecutive distinct values; ties go to
/// the lower feature index, then the lower threshold.
DecisionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config);

/// P(class 1) from the reached leaf's class counts.
double predict_tree(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Bagged trees; tree t uses seed derive_seed(config.seed, t).
ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config);

/// Mean of member tree probabilities.
double predict_forest(const ForestModel& forest, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Mean decrease in Gini impurity per feature, normalized to sum 1 (all
/// zeros when the model never splits).
Eigen::VectorXd feature_importance(const DecisionTree& tree);
Eigen::VectorXd feature_importance(const ForestModel& forest);

/// Probability >= 0.5 predicts class 1.
inline int decide(double probability) { return probability >= 0.5 ? 1 : 0; }

}  // namespace muse
