#pragma once

#include "muse/aitr.hpp"
#include "muse/history.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace muse {

/// Encodes every sample (top-1 evidence, fusion tokens, MUSE vector) with
/// target 1 for any non-truthful label.
std::vector<AitrExample<float>> encode_dataset(const Dataset& dataset);

struct AitrFit {
  AitrParams<float> params;
  TrainingHistory history;
};

/// BCE-with-logits, AdamW, mini-batches; keeps the checkpoint with the best
/// validation accuracy and stops after `patience` epochs without improvement.
AitrFit train_aitr(const std::vector<AitrExample<float>>& train, const std::vector<AitrExample<float>>& val,
                   const AitrConfig& config);
AitrFit train_aitr(const Dataset& train, const Dataset& val, const AitrConfig& config);

/// Eval-mode logits, one per example.
Eigen::VectorXf aitr_logits(const AitrParams<float>& params, const AitrConfig& config,
                            const std::vector<AitrExample<float>>& examples);

double aitr_accuracy(const AitrParams<float>& params, const AitrConfig& config,
                     const std::vector<AitrExample<float>>& examples);

struct GridCell {
  AitrConfig config;
  bool failed = false;
  std::string error;
  double val_accuracy = 0.0;
  int best_epoch = 0;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;  // index into cells
  AitrFit best_fit;
};

/// lr {1e-4, 5e-5} x z {256, 1024, 2048} x h {[4,4,4,4], [8,8,8,8],
/// [1,2,4,8], [8,4,2,1]}; the granular h options are dropped when
/// pooling is None.
std::vector<AitrConfig> default_grid(const AitrConfig& base);
/// Same head options over caller-chosen learning rates and widths.
std::vector<AitrConfig> default_grid(const AitrConfig& base, const std::vector<double>& lrs,
                                     const std::vector<int>& ff_widths);

/// Trains every cell; failed cells are recorded and skipped. The best cell
/// has the highest validation accuracy, first in order on ties.
GridResult grid_search(const std::vector<AitrExample<float>>& train, const std::vector<AitrExample<float>>& val,
                       const std::vector<AitrConfig>& grid);

/// Versioned container: magic, version, JSON header (config + tensor
/// table), then little-endian binary32 tensor blocks.
void save_aitr_checkpoint(const std::filesystem::path& path, const AitrParams<float>& params,
                          const AitrConfig& config);
std::pair<AitrParams<float>, AitrConfig> load_aitr_checkpoint(const std::filesystem::path& path);

std::string aitr_config_json(const AitrConfig& config);
AitrConfig aitr_config_from_json(const std::string& text);

}  // namespace muse
