#pragma once

#include <cstdint>

namespace muse {

/// Hyperparameters for the tabular classifiers.
struct FitConfig {
  int max_depth = 6;          // <= 0 means unbounded
  int min_leaf_size = 5;
  int n_trees = 100;
  int feature_subsample = 0;  // 0 means ceil(sqrt(p))
  bool bootstrap = true;
  int mlp_hidden_width = 128;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int epochs = 100;
  int batch_size = 64;
  int patience = 10;
  std::uint64_t seed = 0;
};

}  // namespace muse
