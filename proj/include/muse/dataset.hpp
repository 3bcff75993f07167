#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace muse {

/// Raw backbone output, stored exactly as produced (not normalized).
using Embedding = Eigen::VectorXf;

enum class Label : int { Truthful = 0, OOC = 1, Miscaptioned = 2 };
inline constexpr std::size_t kNumLabels = 3;

enum class SplitTag { Train, Val, Test, External };

std::string_view label_name(Label label);  // "true" | "ooc" | "miscaptioned"
Label parse_label(std::string_view name);
std::string_view split_name(SplitTag tag);
SplitTag parse_split(std::string_view name);

struct Sample {
  std::string id;
  Embedding image;
  Embedding text;
  std::vector<Embedding> image_evidence;  // up to 10 candidates
  std::vector<Embedding> text_evidence;   // up to 19 candidates
  Label label = Label::Truthful;

  Eigen::Index dim() const { return image.size(); }
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  SplitTag split = SplitTag::Train;
  std::string backbone_tag;

  std::size_t size() const { return samples.size(); }
  Eigen::Index dim() const { return samples.empty() ? 0 : samples.front().dim(); }
  bool operator==(const Dataset&) const = default;
};

/// Throws InvalidDataset / DimMismatch / MalformedRecord when the dataset
/// violates its invariants (non-empty, homogeneous dim, finite, unique ids).
void validate(const Dataset& dataset);

/// Loads a dataset directory in the canonical format
/// (manifest.json + samples.jsonl + embeddings.bin).
Dataset load_dataset(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir, SplitTag split);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Stratified (per-label) partition into three datasets, deterministic in seed.
/// Fractions must sum to 1 within 1e-9.
std::array<Dataset, 3> split_dataset(const Dataset& dataset,
                                     const std::array<double, 3>& fractions,
                                     std::uint64_t seed);

/// Subset by index list, preserving the given order.
Dataset select(const Dataset& dataset, const std::vector<std::size_t>& indices);

std::array<std::size_t, kNumLabels> class_counts(const Dataset& dataset);

}  // namespace muse
