#include "muse/synthetic.hpp"

#include "muse/error.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>

namespace muse {

namespace {

constexpr int kMaxRetries = 64;
constexpr double kDistractorMargin = 0.1;

std::string sample_id(Label label, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-%06zu", std::string(label_name(label)).c_str(), index);
  return buf;
}

Eigen::VectorXd random_unit(int dim, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  for (;;) {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    const double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

/// Unit vector at cosine `c` from unit vector `anchor`.
Eigen::VectorXd at_cosine(const Eigen::VectorXd& anchor, double c, Rng& rng) {
  Eigen::VectorXd w;
  for (;;) {
    w = random_unit(static_cast<int>(anchor.size()), rng);
    w -= w.dot(anchor) * anchor;
    const double n = w.norm();
    if (n > 1e-6) {
      w /= n;
      break;
    }
  }
  return c * anchor + std::sqrt(std::max(0.0, 1.0 - c * c)) * w;
}

Embedding to_embedding(const Eigen::VectorXd& unit, double norm) {
  return (unit * norm).cast<float>();
}

Similarities jitter(const Similarities& medians, const Similarities& spread,
                    double noise_scale, Rng& rng) {
  if (noise_scale == 0.0) return medians;
  std::normal_distribution<double> normal;
  Similarities out;
  for (std::size_t j = 0; j < kNumComponents; ++j) {
    // Monotone transform of a symmetric perturbation keeps the median in place.
    out[j] = std::tanh(std::atanh(medians[j]) + noise_scale * spread[j] * normal(rng));
  }
  return out;
}

std::vector<Embedding> with_distractors(const Eigen::VectorXd& anchor,
                                        const Eigen::VectorXd& planted,
                                        double planted_cos, int max_distractors,
                                        Rng& rng) {
  std::uniform_real_distribution<double> norm_dist(0.75, 1.25);
  std::vector<Embedding> out;
  const int n_distractors =
      planted_cos - kDistractorMargin > -1.0 ? 1 + static_cast<int>(rng() % max_distractors) : 0;
  const int planted_pos = static_cast<int>(rng() % static_cast<std::uint64_t>(n_distractors + 1));
  for (int k = 0; k <= n_distractors; ++k) {
    if (k == planted_pos) {
      out.push_back(to_embedding(planted, norm_dist(rng)));
      continue;
    }
    const double ceiling = planted_cos - kDistractorMargin;
    const double c = std::max(-1.0, ceiling - 0.4 * uniform01(rng));
    out.push_back(to_embedding(at_cosine(anchor, c, rng), norm_dist(rng)));
  }
  return out;
}

}  // namespace

SyntheticConfig newsclippings_preset() {
  SyntheticConfig c;
  c.backbone_tag = "synthetic-newsclippings";
  // pair, img_img, txt_imgev, img_txtev, txt_txt, ev_ev
  c.target_medians[0] = Similarities{0.27, 0.91, 0.25, 0.22, 0.63, 0.30};
  c.target_medians[1] = Similarities{0.19, 0.69, 0.25, 0.22, 0.32, 0.24};
  return c;
}

SyntheticConfig verite_preset() {
  SyntheticConfig c;
  c.backbone_tag = "synthetic-verite";
  c.n_per_class = 338;
  c.target_medians[0] = Similarities{0.31, 0.83, 0.25, 0.22, 0.32, 0.28};
  c.target_medians[1] = Similarities{0.24, 0.69, 0.25, 0.22, 0.28, 0.24};
  c.target_medians[2] = Similarities{0.29, 0.82, 0.25, 0.22, 0.46, 0.28};
  return c;
}

std::optional<SyntheticConfig> preset_by_name(std::string_view name) {
  if (name == "newsclippings") return newsclippings_preset();
  if (name == "verite") return verite_preset();
  return std::nullopt;
}

std::optional<std::array<Eigen::VectorXd, 4>> realize_similarities(
    const Similarities& s, int dim, Rng& rng) {
  // Vector order: claim image, claim text, image evidence, text evidence.
  Eigen::Matrix4d gram;
  gram << 1.0, s[0], s[1], s[3],
          s[0], 1.0, s[2], s[4],
          s[1], s[2], 1.0, s[5],
          s[3], s[4], s[5], 1.0;
  Eigen::LLT<Eigen::Matrix4d> llt(gram);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Eigen::Matrix4d lower = llt.matrixL();
  if (lower.diagonal().minCoeff() < 1e-6) return std::nullopt;

  // Random orthonormal 4-frame via modified Gram-Schmidt (two passes).
  Eigen::MatrixXd frame(dim, 4);
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd v = random_unit(dim, rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < k; ++j) v -= frame.col(j).dot(v) * frame.col(j);
    }
    frame.col(k) = v.normalized();
  }
  std::array<Eigen::VectorXd, 4> out;
  for (int k = 0; k < 4; ++k) out[k] = frame * lower.row(k).transpose();
  return out;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  if (config.dim < 4) {
    throw Error(ErrorKind::InfeasibleTargets, "synthetic generation needs dim >= 4");
  }
  if (config.n_per_class == 0) throw Error(ErrorKind::InfeasibleTargets, "n_per_class must be positive");
  if (!(config.noise_scale >= 0.0)) throw Error(ErrorKind::InfeasibleTargets, "noise_scale must be >= 0");

  Dataset out;
  out.split = SplitTag::Train;
  out.backbone_tag = config.backbone_tag;
  std::uniform_real_distribution<double> norm_dist(0.75, 1.25);

  for (std::size_t c = 0; c < kNumLabels; ++c) {
    if (!config.target_medians[c]) continue;
    const Similarities& medians = *config.target_medians[c];
    for (double m : medians) {
      if (!(m >= -1.0 && m <= 1.0)) {
        throw Error(ErrorKind::InfeasibleTargets, "target median outside [-1, 1]");
      }
    }
    const auto label = static_cast<Label>(c);
    Rng rng(derive_seed(config.seed, c));
    for (std::size_t i = 0; i < config.n_per_class; ++i) {
      std::optional<std::array<Eigen::VectorXd, 4>> vecs;
      Similarities sims{};
      for (int attempt = 0; attempt < kMaxRetries && !vecs; ++attempt) {
        sims = jitter(medians, config.spread, config.noise_scale, rng);
        vecs = realize_similarities(sims, config.dim, rng);
        if (!vecs && config.noise_scale == 0.0) break;
      }
      if (!vecs) {
        throw Error(ErrorKind::InfeasibleTargets,
                    "class '" + std::string(label_name(label)) +
                        "': no positive-definite similarity matrix after retries");
      }
      const auto& [img, txt, img_ev, txt_ev] = *vecs;
      Sample s;
      s.id = sample_id(label, i);
      s.label = label;
      s.image = to_embedding(img, norm_dist(rng));
      s.text = to_embedding(txt, norm_dist(rng));
      s.image_evidence = with_distractors(img, img_ev, sims[1], 4, rng);
      s.text_evidence = with_distractors(txt, txt_ev, sims[4], 6, rng);
      out.samples.push_back(std::move(s));
    }
  }
  if (out.samples.empty()) throw Error(ErrorKind::InfeasibleTargets, "no class has targets");
  return out;
}

}  // namespace muse
