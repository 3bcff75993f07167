#include "muse/tree.hpp"

#include "muse/error.hpp"
#include "muse/parallel.hpp"
#include "muse/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace muse {

namespace {

using Counts = std::array<std::int64_t, 2>;

/// n * gini, from integer class counts.
double weighted_gini(const Counts& c) {
  const double n = static_cast<double>(c[0] + c[1]);
  if (n == 0.0) return 0.0;
  const double a = static_cast<double>(c[0]), b = static_cast<double>(c[1]);
  return n - (a * a + b * b) / n;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config,
              int feature_subsample, Rng* rng)
      : X_(X), y_(y), config_(config), feature_subsample_(feature_subsample), rng_(rng) {}

  DecisionTree build(std::vector<Eigen::Index> rows) {
    tree_.n_features = static_cast<int>(X_.cols());
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<Eigen::Index> rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    Counts counts{};
    for (Eigen::Index r : rows) ++counts[static_cast<std::size_t>(y_[r])];
    tree_.nodes[id].class_counts = counts;

    const auto n = static_cast<std::int64_t>(rows.size());
    const bool depth_left = config_.max_depth <= 0 || depth < config_.max_depth;
    if (!depth_left || counts[0] == 0 || counts[1] == 0 || n < 2 * config_.min_leaf_size) {
      return id;
    }
    const Split best = find_split(rows, counts);
    if (best.feature < 0) return id;
    // Require a strictly positive impurity decrease.
    if (weighted_gini(counts) - best.score <= 1e-12 * static_cast<double>(n)) return id;

    std::vector<Eigen::Index> left, right;
    for (Eigen::Index r : rows) {
      (X_(r, best.feature) <= best.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    tree_.nodes[id].feature = best.feature;
    tree_.nodes[id].threshold = best.threshold;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  std::vector<int> candidate_features() {
    const int p = static_cast<int>(X_.cols());
    std::vector<int> all(p);
    std::iota(all.begin(), all.end(), 0);
    if (feature_subsample_ <= 0 || feature_subsample_ >= p || rng_ == nullptr) return all;
    // Partial Fisher-Yates, then restore index order for tie-breaking.
    for (int i = 0; i < feature_subsample_; ++i) {
      const int j = i + static_cast<int>((*rng_)() % static_cast<std::uint64_t>(p - i));
      std::swap(all[i], all[j]);
    }
    all.resize(feature_subsample_);
    std::sort(all.begin(), all.end());
    return all;
  }

  Split find_split(const std::vector<Eigen::Index>& rows, const Counts& total) {
    Split best;
    const auto n = static_cast<std::int64_t>(rows.size());
    const std::int64_t min_leaf = std::max(1, config_.min_leaf_size);
    std::vector<std::pair<double, int>> column(rows.size());
    for (int f : candidate_features()) {
      for (std::size_t k = 0; k < rows.size(); ++k) column[k] = {X_(rows[k], f), y_[rows[k]]};
      std::sort(column.begin(), column.end());
      Counts left{};
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        ++left[static_cast<std::size_t>(column[k].second)];
        const double a = column[k].first, b = column[k + 1].first;
        if (a == b) continue;
        const auto nl = static_cast<std::int64_t>(k + 1);
        if (nl < min_leaf || n - nl < min_leaf) continue;
        const Counts right{total[0] - left[0], total[1] - left[1]};
        const double score = weighted_gini(left) + weighted_gini(right);
        if (score < best.score) {
          double mid = a + (b - a) / 2.0;
          if (!(mid < b)) mid = a;
          best = {f, mid, score};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXi& y_;
  const FitConfig& config_;
  int feature_subsample_;
  Rng* rng_;
  DecisionTree tree_;
};

void check_inputs(const Eigen::MatrixXd& X, const Eigen::VectorXi& y) {
  if (X.rows() == 0 || X.cols() == 0) throw Error(ErrorKind::EmptyInput, "no training rows");
  if (y.size() != X.rows()) throw Error(ErrorKind::DimMismatch, "label count differs from row count");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) throw Error(ErrorKind::InvalidConfig, "labels must be 0 or 1");
  }
}

int resolve_subsample(const FitConfig& config, Eigen::Index p) {
  if (config.feature_subsample > 0) return std::min<int>(config.feature_subsample, static_cast<int>(p));
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
}

const TreeNode& leaf_for(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (tree.nodes.empty()) throw Error(ErrorKind::UnfitModel, "tree has no nodes");
  if (x.size() != tree.n_features) {
    throw Error(ErrorKind::DimMismatch, "expected " + std::to_string(tree.n_features) +
                                            " features, got " + std::to_string(x.size()));
  }
  const TreeNode* node = &tree.nodes[0];
  while (!node->is_leaf()) {
    node = &tree.nodes[static_cast<std::size_t>(x[node->feature] <= node->threshold ? node->left : node->right)];
  }
  return *node;
}

Eigen::VectorXd raw_importance(const DecisionTree& tree) {
  Eigen::VectorXd imp = Eigen::VectorXd::Zero(tree.n_features);
  if (tree.nodes.empty()) throw Error(ErrorKind::UnfitModel, "tree has no nodes");
  const double root_n = static_cast<double>(tree.nodes[0].count());
  for (const TreeNode& node : tree.nodes) {
    if (node.is_leaf()) continue;
    const auto& l = tree.nodes[static_cast<std::size_t>(node.left)];
    const auto& r = tree.nodes[static_cast<std::size_t>(node.right)];
    imp[node.feature] += (weighted_gini(node.class_counts) - weighted_gini(l.class_counts) -
                          weighted_gini(r.class_counts)) / root_n;
  }
  return imp;
}

Eigen::VectorXd normalized(Eigen::VectorXd v) {
  v = v.cwiseMax(0.0);
  const double s = v.sum();
  if (s > 0.0) v /= s;
  return v;
}

}  // namespace

DecisionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config) {
  check_inputs(X, y);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return TreeBuilder(X, y, config, 0, nullptr).build(std::move(rows));
}

double predict_tree(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const TreeNode& leaf = leaf_for(tree, x);
  return static_cast<double>(leaf.class_counts[1]) / static_cast<double>(leaf.count());
}

ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config) {
  check_inputs(X, y);
  if (config.n_trees < 1) throw Error(ErrorKind::InvalidConfig, "n_trees must be positive");
  ForestModel forest;
  forest.n_features = static_cast<int>(X.cols());
  forest.bootstrap = config.bootstrap;
  forest.feature_subsample = resolve_subsample(config, X.cols());
  forest.trees.resize(static_cast<std::size_t>(config.n_trees));
  for (int t = 0; t < config.n_trees; ++t) {
    forest.per_tree_seeds.push_back(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
  }
  parallel_for(forest.trees.size(), [&](std::size_t t) {
    Rng rng(forest.per_tree_seeds[t]);
    const auto n = static_cast<std::size_t>(X.rows());
    std::vector<Eigen::Index> rows(n);
    if (forest.bootstrap) {
      for (auto& r : rows) r = static_cast<Eigen::Index>(rng() % n);
    } else {
      std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    }
    forest.trees[t] = TreeBuilder(X, y, config, forest.feature_subsample, &rng).build(std::move(rows));
  });
  return forest;
}

double predict_forest(const ForestModel& forest, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (forest.trees.empty()) throw Error(ErrorKind::UnfitModel, "forest has no trees");
  double sum = 0.0;
  for (const auto& tree : forest.trees) sum += predict_tree(tree, x);
  return sum / static_cast<double>(forest.trees.size());
}

Eigen::VectorXd feature_importance(const DecisionTree& tree) {
  return normalized(raw_importance(tree));
}

Eigen::VectorXd feature_importance(const ForestModel& forest) {
  if (forest.trees.empty()) throw Error(ErrorKind::UnfitModel, "forest has no trees");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(forest.n_features);
  for (const auto& tree : forest.trees) mean += feature_importance(tree);
  return normalized(mean / static_cast<double>(forest.trees.size()));
}

}  // namespace muse
