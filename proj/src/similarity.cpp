#include "muse/similarity.hpp"

#include "muse/parallel.hpp"

#include <cstdio>
#include <fstream>

namespace muse {

namespace {

std::optional<std::size_t> argmax_cosine(const Embedding& anchor,
                                         const std::vector<Embedding>& candidates,
                                         double& best_score) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = cosine(anchor, candidates[i]);
    if (!best || s > best_score) {
      best = i;
      best_score = s;
    }
  }
  if (!best) best_score = 0.0;
  return best;
}

}  // namespace

RankedEvidence rerank_evidence(const Sample& sample) {
  RankedEvidence r;
  r.image_index = argmax_cosine(sample.image, sample.image_evidence, r.image_score);
  r.text_index = argmax_cosine(sample.text, sample.text_evidence, r.text_score);
  return r;
}

MuseVector compute_muse(const Sample& sample, const RankedEvidence& ranked) {
  MuseVector m;
  auto& v = m.values;
  v.fill(0.0);
  v[0] = cosine(sample.image, sample.text);
  const Embedding* img_ev = ranked.image_index ? &sample.image_evidence.at(*ranked.image_index) : nullptr;
  const Embedding* txt_ev = ranked.text_index ? &sample.text_evidence.at(*ranked.text_index) : nullptr;
  if (img_ev) {
    m.image_evidence = true;
    v[1] = cosine(sample.image, *img_ev);
    v[2] = cosine(sample.text, *img_ev);
  }
  if (txt_ev) {
    m.text_evidence = true;
    v[3] = cosine(sample.image, *txt_ev);
    v[4] = cosine(sample.text, *txt_ev);
  }
  if (img_ev && txt_ev) v[5] = cosine(*img_ev, *txt_ev);
  return m;
}

FeatureTable featurize_dataset(const Dataset& dataset) {
  const std::size_t n = dataset.size();
  FeatureTable t;
  t.ids.resize(n);
  t.labels.resize(n);
  t.features.resize(static_cast<Eigen::Index>(n), 6);
  t.masks.resize(static_cast<Eigen::Index>(n), 2);
  parallel_for(n, [&](std::size_t i) {
    const Sample& s = dataset.samples[i];
    MuseVector m;
    try {
      m = compute_muse(s, rerank_evidence(s));
    } catch (const Error& e) {
      throw Error(e.kind(), "sample '" + s.id + "': " + e.what());
    }
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      t.features(row, static_cast<Eigen::Index>(j)) = m.values[j];
    }
    t.masks(row, 0) = m.image_evidence;
    t.masks(row, 1) = m.text_evidence;
    t.ids[i] = s.id;
    t.labels[i] = s.label;
  });
  return t;
}

void write_features_csv(const FeatureTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << "id";
  for (const char* name : component_names()) out << ',' << name;
  out << ",img_mask,txt_mask,label\n";
  char buf[32];
  for (std::size_t i = 0; i < table.rows(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    out << table.ids[i];
    for (Eigen::Index j = 0; j < 6; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", table.features(row, j));
      out << ',' << buf;
    }
    out << ',' << int(table.masks(row, 0)) << ',' << int(table.masks(row, 1)) << ','
        << label_name(table.labels[i]) << '\n';
  }
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

}  // namespace muse
