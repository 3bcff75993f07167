#pragma once

#include "muse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("muse_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Median by full sort; kept separate from the library's statistics code.
inline double naive_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Plain-loop cosine in long double.
template <class V>
double naive_cosine(const V& a, const V& b) {
  long double dot = 0, na = 0, nb = 0;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

inline muse::Embedding random_embedding(int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  muse::Embedding v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v;
}

inline muse::Sample random_sample(const std::string& id, int dim, std::size_t n_img,
                                  std::size_t n_txt, std::mt19937_64& rng) {
  muse::Sample s;
  s.id = id;
  s.image = random_embedding(dim, rng);
  s.text = random_embedding(dim, rng);
  for (std::size_t i = 0; i < n_img; ++i) s.image_evidence.push_back(random_embedding(dim, rng));
  for (std::size_t i = 0; i < n_txt; ++i) s.text_evidence.push_back(random_embedding(dim, rng));
  s.label = static_cast<muse::Label>(rng() % 3);
  return s;
}

}  // namespace testing
