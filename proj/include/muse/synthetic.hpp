#pragma once

#include "muse/dataset.hpp"
#include "muse/random.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace muse {

/// Order of the six similarity components everywhere in the library.
enum class Component : int {
  Pair = 0,      // claim image vs claim text
  ImgImg = 1,    // claim image vs image evidence
  TxtImgEv = 2,  // claim text vs image evidence
  ImgTxtEv = 3,  // claim image vs text evidence
  TxtTxt = 4,    // claim text vs text evidence
  EvEv = 5,      // image evidence vs text evidence
};
inline constexpr std::size_t kNumComponents = 6;

using Similarities = std::array<double, kNumComponents>;

struct SyntheticConfig {
  std::size_t n_per_class = 2000;
  int dim = 64;
  /// Per-class target medians; classes without a value are not generated.
  std::array<std::optional<Similarities>, kNumLabels> target_medians{};
  /// Per-component spread in Fisher-z (atanh) space, multiplied by noise_scale.
  Similarities spread{0.035, 0.35, 0.10, 0.10, 0.25, 0.12};
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
  std::string backbone_tag = "synthetic";
};

/// Calibrated to the NewsCLIPpings class medians (Truthful / OOC).
SyntheticConfig newsclippings_preset();
/// Calibrated to the VERITE class medians (Truthful / OOC / Miscaptioned).
SyntheticConfig verite_preset();
std::optional<SyntheticConfig> preset_by_name(std::string_view name);

/// Generates n_per_class samples for every class with targets. Each sample's
/// claim/evidence embeddings realize a jittered 4x4 Gram matrix exactly, so
/// with noise_scale == 0 every similarity equals its target.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Builds four unit vectors in R^dim whose pairwise cosines are the given
/// similarities, inside a random orthonormal frame. Returns nullopt when the
/// implied Gram matrix is not positive definite.
std::optional<std::array<Eigen::VectorXd, 4>> realize_similarities(
    const Similarities& sims, int dim, Rng& rng);

}  // namespace muse
