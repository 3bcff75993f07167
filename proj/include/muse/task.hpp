#pragma once

#include "muse/dataset.hpp"

#include <optional>
#include <string_view>

namespace muse {

/// Binary evaluation tasks realized as label filters over 3-way labels.
enum class Task { TrueVsOOC, TrueVsMiscaptioned, All };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

/// Binary target (0 = truthful, 1 = falsified) or nullopt if `label` is
/// filtered out under `task`. All maps every non-truthful label to 1.
std::optional<int> binary_target(Label label, Task task);

}  // namespace muse
