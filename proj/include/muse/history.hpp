#pragma once

#include <filesystem>
#include <limits>
#include <vector>

namespace muse {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // 1-based epoch of the returned checkpoint, 0 = init
  bool stopped_early = false;
};

/// epoch,train_loss,train_accuracy,val_accuracy
void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path);

}  // namespace muse
