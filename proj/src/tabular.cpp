#include "muse/tabular.hpp"

#include "muse/error.hpp"

namespace muse {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::TrueVsOOC: return "true_vs_ooc";
    case Task::TrueVsMiscaptioned: return "true_vs_miscaptioned";
    case Task::All: return "all";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "true_vs_ooc") return Task::TrueVsOOC;
  if (name == "true_vs_miscaptioned") return Task::TrueVsMiscaptioned;
  if (name == "all") return Task::All;
  throw Error(ErrorKind::InvalidConfig, "unknown task '" + std::string(name) + "'");
}

std::optional<int> binary_target(Label label, Task task) {
  switch (label) {
    case Label::Truthful: return 0;
    case Label::OOC:
      return task == Task::TrueVsMiscaptioned ? std::nullopt : std::optional<int>(1);
    case Label::Miscaptioned:
      return task == Task::TrueVsOOC ? std::nullopt : std::optional<int>(1);
  }
  return std::nullopt;
}

TabularData make_tabular(const FeatureTable& table, Task task, const ColumnSelection& columns) {
  if (columns.components.empty() && !columns.with_masks) {
    throw Error(ErrorKind::InvalidConfig, "empty column selection");
  }
  for (int c : columns.components) {
    if (c < 0 || c >= 6) throw Error(ErrorKind::InvalidConfig, "component index out of range");
  }
  TabularData out;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (binary_target(table.labels[i], task)) out.rows.push_back(i);
  }
  const auto n = static_cast<Eigen::Index>(out.rows.size());
  const auto p = static_cast<Eigen::Index>(columns.components.size() + (columns.with_masks ? 2 : 0));
  out.X.resize(n, p);
  out.y.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = static_cast<Eigen::Index>(out.rows[static_cast<std::size_t>(r)]);
    Eigen::Index col = 0;
    for (int c : columns.components) out.X(r, col++) = table.features(src, c);
    if (columns.with_masks) {
      out.X(r, col++) = table.masks(src, 0) ? 1.0 : 0.0;
      out.X(r, col++) = table.masks(src, 1) ? 1.0 : 0.0;
    }
    out.y[r] = *binary_target(table.labels[static_cast<std::size_t>(src)], task);
  }
  return out;
}

}  // namespace muse
