#pragma once

#include "muse/dataset.hpp"
#include "muse/error.hpp"
#include "muse/synthetic.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace muse {

inline constexpr double kZeroNormThreshold = 1e-12;

/// Cosine similarity accumulated in double, clamped to [-1, 1].
/// Throws ZeroVector if either norm is below kZeroNormThreshold.
template <class DerivedA, class DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimMismatch,
                "cosine of " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  const double na = ad.norm();
  const double nb = bd.norm();
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) {
    throw Error(ErrorKind::ZeroVector, "cosine of a zero-norm vector");
  }
  return std::clamp(ad.dot(bd) / (na * nb), -1.0, 1.0);
}

struct RankedEvidence {
  std::optional<std::size_t> image_index;
  std::optional<std::size_t> text_index;
  double image_score = 0.0;
  double text_score = 0.0;
};

/// Picks the top-1 image evidence by image-to-image cosine and the top-1 text
/// evidence by text-to-text cosine. Ties go to the lowest index.
RankedEvidence rerank_evidence(const Sample& sample);

struct MuseVector {
  Similarities values{};       // ordered as Component
  bool image_evidence = false;  // mask: top-1 image evidence present
  bool text_evidence = false;   // mask: top-1 text evidence present

  double operator[](Component c) const { return values[static_cast<std::size_t>(c)]; }
};

/// Six similarities from the claim pair and its top-1 evidence. Entries that
/// need absent evidence hold 0.0 with the matching mask cleared.
MuseVector compute_muse(const Sample& sample, const RankedEvidence& ranked);

inline const std::array<const char*, kNumComponents>& component_names() {
  static const std::array<const char*, kNumComponents> names{
      "pair", "img_img", "txt_imgev", "img_txtev", "txt_txt", "ev_ev"};
  return names;
}

struct FeatureTable {
  std::vector<std::string> ids;
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> features;
  Eigen::Array<bool, Eigen::Dynamic, 2, Eigen::RowMajor> masks;
  std::vector<Label> labels;

  std::size_t rows() const { return ids.size(); }
};

/// Whether component j of a row was computed: masks are (image evidence,
/// text evidence) present.
inline bool component_present(const FeatureTable& table, Eigen::Index row, int j) {
  switch (j) {
    case 1:
    case 2: return table.masks(row, 0);
    case 3:
    case 4: return table.masks(row, 1);
    case 5: return table.masks(row, 0) && table.masks(row, 1);
    default: return true;
  }
}

/// Row i = compute_muse(rerank_evidence(sample_i)). Errors carry the sample id.
FeatureTable featurize_dataset(const Dataset& dataset);

/// CSV: id,pair,img_img,txt_imgev,img_txtev,txt_txt,ev_ev,img_mask,txt_mask,label
void write_features_csv(const FeatureTable& table, const std::filesystem::path& path);

}  // namespace muse
