#include "muse/dataset.hpp"

#include "muse/detail/binary_io.hpp"
#include "muse/error.hpp"
#include "muse/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace muse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kManifestName = "manifest.json";
constexpr const char* kSamplesName = "samples.jsonl";
constexpr const char* kEmbeddingsName = "embeddings.bin";

bool all_finite(const Embedding& v) { return v.allFinite(); }

void check_embedding(const Sample& s, const Embedding& v, Eigen::Index dim,
                     const char* role) {
  if (v.size() != dim) {
    throw Error(ErrorKind::DimMismatch,
                "sample '" + s.id + "' " + role + ": expected " +
                    std::to_string(dim) + ", found " + std::to_string(v.size()));
  }
  if (!all_finite(v)) {
    throw Error(ErrorKind::MalformedRecord,
                "sample '" + s.id + "' " + role + ": non-finite entry");
  }
}

}  // namespace

std::string_view label_name(Label label) {
  switch (label) {
    case Label::Truthful: return "true";
    case Label::OOC: return "ooc";
    case Label::Miscaptioned: return "miscaptioned";
  }
  return "?";
}

Label parse_label(std::string_view name) {
  if (name == "true") return Label::Truthful;
  if (name == "ooc") return Label::OOC;
  if (name == "miscaptioned") return Label::Miscaptioned;
  throw Error(ErrorKind::MalformedRecord, "unknown label '" + std::string(name) + "'");
}

std::string_view split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    case SplitTag::External: return "external";
  }
  return "?";
}

SplitTag parse_split(std::string_view name) {
  if (name == "train") return SplitTag::Train;
  if (name == "val") return SplitTag::Val;
  if (name == "test") return SplitTag::Test;
  if (name == "external") return SplitTag::External;
  throw Error(ErrorKind::MalformedRecord, "unknown split tag '" + std::string(name) + "'");
}

void validate(const Dataset& dataset) {
  if (dataset.samples.empty()) {
    throw Error(ErrorKind::InvalidDataset, "dataset has no samples");
  }
  const Eigen::Index dim = dataset.dim();
  if (dim < 2) throw Error(ErrorKind::InvalidDataset, "embedding dim must be >= 2");
  std::set<std::string> ids;
  for (const Sample& s : dataset.samples) {
    if (!ids.insert(s.id).second) {
      throw Error(ErrorKind::InvalidDataset, "duplicate sample id '" + s.id + "'");
    }
    check_embedding(s, s.image, dim, "image");
    check_embedding(s, s.text, dim, "text");
    for (const auto& e : s.image_evidence) check_embedding(s, e, dim, "image evidence");
    for (const auto& e : s.text_evidence) check_embedding(s, e, dim, "text evidence");
  }
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  validate(dataset);
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream samples_out(dir / kSamplesName, std::ios::binary | std::ios::trunc);
  std::ofstream emb_out(dir / kEmbeddingsName, std::ios::binary | std::ios::trunc);
  if (!samples_out || !emb_out) {
    throw Error(ErrorKind::IoFailure, "cannot write dataset to " + dir.string());
  }

  std::int64_t row = 0;
  auto put = [&](const Embedding& v) {
    detail::write_f32_le(emb_out, std::span<const float>(v.data(), v.size()));
    return row++;
  };
  for (const Sample& s : dataset.samples) {
    json rec;
    rec["id"] = s.id;
    rec["label"] = label_name(s.label);
    rec["image_ref"] = put(s.image);
    rec["text_ref"] = put(s.text);
    json img = json::array();
    for (const auto& e : s.image_evidence) img.push_back(put(e));
    json txt = json::array();
    for (const auto& e : s.text_evidence) txt.push_back(put(e));
    rec["image_evidence_refs"] = std::move(img);
    rec["text_evidence_refs"] = std::move(txt);
    samples_out << rec.dump() << '\n';
  }

  json manifest = {
      {"version", kFormatVersion},
      {"dim", dataset.dim()},
      {"backbone_tag", dataset.backbone_tag},
      {"split_tag", split_name(dataset.split)},
      {"count", dataset.samples.size()},
      {"embedding_file", kEmbeddingsName},
      {"index_file", kSamplesName},
  };
  std::ofstream manifest_out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  manifest_out << manifest.dump(2) << '\n';

  samples_out.flush();
  emb_out.flush();
  manifest_out.flush();
  if (!samples_out || !emb_out || !manifest_out) {
    throw Error(ErrorKind::IoFailure, "write failed under " + dir.string());
  }
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  std::ifstream manifest_in(manifest_path);
  if (!manifest_in) throw Error(ErrorKind::MissingFile, manifest_path.string());

  json manifest;
  try {
    manifest = json::parse(manifest_in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, manifest_path.string() + ": " + e.what());
  }

  Dataset out;
  std::int64_t dim = 0;
  std::size_t count = 0;
  fs::path emb_path, index_path;
  try {
    if (manifest.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorKind::MalformedRecord, "unsupported manifest version");
    }
    dim = manifest.at("dim").get<std::int64_t>();
    count = manifest.at("count").get<std::size_t>();
    out.backbone_tag = manifest.at("backbone_tag").get<std::string>();
    out.split = parse_split(manifest.at("split_tag").get<std::string>());
    emb_path = dir / manifest.at("embedding_file").get<std::string>();
    index_path = dir / manifest.at("index_file").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, manifest_path.string() + ": " + e.what());
  }
  if (dim < 2) throw Error(ErrorKind::MalformedRecord, "manifest dim must be >= 2");

  std::ifstream emb_in(emb_path, std::ios::binary | std::ios::ate);
  if (!emb_in) throw Error(ErrorKind::MissingFile, emb_path.string());
  const auto bytes = static_cast<std::size_t>(emb_in.tellg());
  const std::size_t row_bytes = static_cast<std::size_t>(dim) * sizeof(float);
  if (bytes % row_bytes != 0) {
    throw Error(ErrorKind::DimMismatch,
                emb_path.string() + ": size " + std::to_string(bytes) +
                    " is not a multiple of dim " + std::to_string(dim) + " rows");
  }
  const std::size_t n_rows = bytes / row_bytes;
  std::vector<float> table(n_rows * static_cast<std::size_t>(dim));
  emb_in.seekg(0);
  emb_in.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(bytes));
  if (!emb_in) throw Error(ErrorKind::IoFailure, "short read on " + emb_path.string());
  detail::f32_from_le(table);

  std::ifstream index_in(index_path);
  if (!index_in) throw Error(ErrorKind::MissingFile, index_path.string());

  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(index_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = index_path.filename().string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::MalformedRecord, where + ": " + e.what());
    }
    Sample s;
    std::string id = "?";
    try {
      id = rec.at("id").get<std::string>();
      s.id = id;
      if (rec.contains("dim") && rec["dim"].get<std::int64_t>() != dim) {
        throw Error(ErrorKind::DimMismatch,
                    where + " (id=" + id + "): expected " + std::to_string(dim) +
                        ", found " + std::to_string(rec["dim"].get<std::int64_t>()));
      }
      s.label = parse_label(rec.at("label").get<std::string>());
      auto fetch = [&](std::int64_t ref) {
        if (ref < 0 || static_cast<std::size_t>(ref) >= n_rows) {
          throw Error(ErrorKind::MalformedRecord,
                      where + " (id=" + id + "): row " + std::to_string(ref) + " out of range");
        }
        Embedding v = Eigen::Map<const Embedding>(
            table.data() + static_cast<std::size_t>(ref) * static_cast<std::size_t>(dim), dim);
        if (!v.allFinite()) {
          throw Error(ErrorKind::MalformedRecord,
                      where + " (id=" + id + "): non-finite value in row " + std::to_string(ref) +
                          " at byte offset " +
                          std::to_string(static_cast<std::size_t>(ref) * row_bytes));
        }
        return v;
      };
      s.image = fetch(rec.at("image_ref").get<std::int64_t>());
      s.text = fetch(rec.at("text_ref").get<std::int64_t>());
      for (const auto& r : rec.at("image_evidence_refs")) s.image_evidence.push_back(fetch(r.get<std::int64_t>()));
      for (const auto& r : rec.at("text_evidence_refs")) s.text_evidence.push_back(fetch(r.get<std::int64_t>()));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::MalformedRecord, where + " (id=" + id + "): " + e.what());
    }
    if (!seen.insert(s.id).second) {
      throw Error(ErrorKind::MalformedRecord, where + ": duplicate id '" + s.id + "'");
    }
    out.samples.push_back(std::move(s));
  }
  if (out.samples.size() != count) {
    throw Error(ErrorKind::MalformedRecord,
                "manifest count " + std::to_string(count) + " but " +
                    std::to_string(out.samples.size()) + " records");
  }
  if (out.samples.empty()) throw Error(ErrorKind::InvalidDataset, "dataset has no samples");
  return out;
}

Dataset load_dataset(const fs::path& dir, SplitTag split) {
  Dataset d = load_dataset(dir);
  d.split = split;
  return d;
}

Dataset select(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.split = dataset.split;
  out.backbone_tag = dataset.backbone_tag;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(dataset.samples.at(i));
  return out;
}

std::array<std::size_t, kNumLabels> class_counts(const Dataset& dataset) {
  std::array<std::size_t, kNumLabels> counts{};
  for (const Sample& s : dataset.samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

std::array<Dataset, 3> split_dataset(const Dataset& dataset,
                                     const std::array<double, 3>& fractions,
                                     std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || f > 1.0) throw Error(ErrorKind::BadFractions, "fraction out of [0,1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::BadFractions, "fractions sum to " + std::to_string(total));
  }

  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (static_cast<std::size_t>(dataset.samples[i].label) == c) members.push_back(i);
    }
    Rng rng(derive_seed(seed, c));
    shuffle_in_place(members, rng);
    const std::size_t n = members.size();
    const auto n0 = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    const auto n1 = std::min(n - std::min(n0, n),
                             static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t part = k < n0 ? 0 : (k < n0 + n1 ? 1 : 2);
      parts[part].push_back(members[k]);
    }
  }
  constexpr std::array<SplitTag, 3> tags{SplitTag::Train, SplitTag::Val, SplitTag::Test};
  std::array<Dataset, 3> out;
  for (std::size_t p = 0; p < 3; ++p) {
    std::sort(parts[p].begin(), parts[p].end());
    out[p] = select(dataset, parts[p]);
    out[p].split = tags[p];
  }
  return out;
}

}  // namespace muse
