#pragma once

#include "muse/similarity.hpp"
#include "muse/task.hpp"

#include <Eigen/Core>

#include <vector>

namespace muse {

struct TabularData {
  Eigen::MatrixXd X;  // n x p
  Eigen::VectorXi y;  // 0/1
  std::vector<std::size_t> rows;  // source row in the feature table

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index n_features() const { return X.cols(); }
};

struct ColumnSelection {
  std::vector<int> components{0, 1, 2, 3, 4, 5};
  bool with_masks = false;

  static ColumnSelection all() { return {}; }
};

/// Design matrix over the selected MUSE columns for the rows kept by `task`.
TabularData make_tabular(const FeatureTable& table, Task task,
                         const ColumnSelection& columns = ColumnSelection::all());

}  // namespace muse
