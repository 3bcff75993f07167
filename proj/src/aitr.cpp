#include "muse/aitr_train.hpp"

#include "muse/adamw.hpp"
#include "muse/detail/binary_io.hpp"
#include "muse/parallel.hpp"
#include "muse/task.hpp"

#include <json.hpp>

#include <fstream>
#include <numeric>

namespace muse {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'U', 'S', 'E', 'A', 'I', 'T', 'R'};
constexpr std::uint64_t kCheckpointVersion = 1;
constexpr std::size_t kChunk = 32;  // samples per gradient shard

template <class M>
void fill_uniform(M& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(u(rng));
}

template <class M>
void fill_normal(M& m, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(n(rng));
}

void affine_init(Mat<float>& w, Vec<float>* b, Eigen::Index out, Eigen::Index in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w.resize(out, in);
  fill_uniform(w, bound, rng);
  if (b) {
    b->resize(out);
    fill_uniform(*b, bound, rng);
  }
}

json config_to_json(const AitrConfig& c) {
  return {{"n_layers", c.n_layers},   {"heads", c.heads},
          {"ff_width", c.ff_width},   {"dim", c.dim},
          {"dropout", c.dropout},     {"pooling", pooling_name(c.pooling)},
          {"use_muse", c.use_muse},   {"positional", c.positional},
          {"lr", c.lr},               {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},   {"seed", c.seed}};
}

AitrConfig config_from_json(const json& j) {
  AitrConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.heads = j.value("heads", c.heads);
  c.ff_width = j.value("ff_width", c.ff_width);
  c.dim = j.value("dim", c.dim);
  c.dropout = j.value("dropout", c.dropout);
  c.pooling = parse_pooling(j.value("pooling", std::string("attention")));
  c.use_muse = j.value("use_muse", c.use_muse);
  c.positional = j.value("positional", c.positional);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

std::string_view pooling_name(Pooling pooling) {
  switch (pooling) {
    case Pooling::Attention: return "attention";
    case Pooling::Max: return "max";
    case Pooling::Weighted: return "weighted";
    case Pooling::None: return "none";
  }
  return "?";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "attention") return Pooling::Attention;
  if (name == "max") return Pooling::Max;
  if (name == "weighted") return Pooling::Weighted;
  if (name == "none") return Pooling::None;
  throw Error(ErrorKind::InvalidConfig, "unknown pooling '" + std::string(name) + "'");
}

void AitrConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (n_layers < 1) fail("n_layers must be positive");
  if (static_cast<int>(heads.size()) != n_layers) fail("need one head count per layer");
  if (dim < 1) fail("dim must be positive");
  for (int h : heads) {
    if (h < 1 || dim % h != 0) fail("head count " + std::to_string(h) + " does not divide dim " + std::to_string(dim));
  }
  if (ff_width < 1) fail("ff_width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size < 1 || max_epochs < 0 || patience < 1) fail("batch_size, max_epochs, patience out of range");
}

AitrParams<float> init_aitr(const AitrConfig& config) {
  config.validate();
  const Eigen::Index d = config.dim, z = config.ff_width;
  Rng rng(derive_seed(config.seed, 0xA17));
  AitrParams<float> p;
  p.cls.resize(d);
  fill_normal(p.cls, 0.02, rng);
  affine_init(p.muse_w, &p.muse_b, d, 6, rng);
  if (config.positional) {
    p.pos.resize(config.seq_len(), d);
    fill_normal(p.pos, 0.02, rng);
  }
  for (int i = 0; i < config.n_layers; ++i) {
    EncoderLayerParams<float> l;
    l.ln1_g = Vec<float>::Ones(d);
    l.ln1_b = Vec<float>::Zero(d);
    affine_init(l.wq, &l.bq, d, d, rng);
    affine_init(l.wk, &l.bk, d, d, rng);
    affine_init(l.wv, &l.bv, d, d, rng);
    affine_init(l.wo, &l.bo, d, d, rng);
    l.ln2_g = Vec<float>::Ones(d);
    l.ln2_b = Vec<float>::Zero(d);
    affine_init(l.ff1_w, &l.ff1_b, z, d, rng);
    affine_init(l.ff2_w, &l.ff2_b, d, z, rng);
    p.layers.push_back(std::move(l));
  }
  if (config.pooling == Pooling::Attention) {
    affine_init(p.pool_wq, nullptr, d, d, rng);
    affine_init(p.pool_wk, nullptr, d, d, rng);
    affine_init(p.pool_wv, nullptr, d, d, rng);
  }
  if (config.pooling == Pooling::Weighted) p.pool_logits = Vec<float>::Zero(config.n_layers);
  affine_init(p.head_w0, &p.head_b0, d, d, rng);
  Mat<float> w1;
  affine_init(w1, &p.head_b1, 1, d, rng);
  p.head_w1 = w1.row(0).transpose();
  return p;
}

std::vector<AitrExample<float>> encode_dataset(const Dataset& dataset) {
  std::vector<AitrExample<float>> out(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const Sample& s = dataset.samples[i];
    try {
      out[i] = encode_example<float>(s, rerank_evidence(s), *binary_target(s.label, Task::All));
    } catch (const Error& e) {
      throw Error(e.kind(), "sample '" + s.id + "': " + e.what());
    }
  });
  return out;
}

Eigen::VectorXf aitr_logits(const AitrParams<float>& params, const AitrConfig& config,
                            const std::vector<AitrExample<float>>& examples) {
  Eigen::VectorXf logits(static_cast<Eigen::Index>(examples.size()));
  const std::size_t chunks = (examples.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    SampleCache<float> cache;
    const std::size_t end = std::min(examples.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      logits[static_cast<Eigen::Index>(i)] =
          forward_sample(params, config, build_input(examples[i], params, config), cache, nullptr);
    }
  });
  return logits;
}

double aitr_accuracy(const AitrParams<float>& params, const AitrConfig& config,
                     const std::vector<AitrExample<float>>& examples) {
  if (examples.empty()) return 0.0;
  const Eigen::VectorXf logits = aitr_logits(params, config, examples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    correct += (logits[static_cast<Eigen::Index>(i)] >= 0.0f ? 1 : 0) == examples[i].target;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

AitrFit train_aitr(const std::vector<AitrExample<float>>& train, const std::vector<AitrExample<float>>& val,
                   const AitrConfig& config) {
  config.validate();
  if (train.empty() || val.empty()) throw Error(ErrorKind::EmptyInput, "train and validation sets must be non-empty");
  for (const auto* set : {&train, &val}) {
    for (const auto& ex : *set) {
      if (ex.tokens.cols() != config.dim) {
        throw Error(ErrorKind::DimMismatch, "example dim " + std::to_string(ex.tokens.cols()) +
                                                " vs config dim " + std::to_string(config.dim));
      }
    }
  }

  AitrFit fit;
  fit.params = init_aitr(config);
  AitrParams<float>& params = fit.params;
  AitrParams<float> best = params;
  TrainingHistory& hist = fit.history;
  hist.best_epoch = 0;
  double best_val = aitr_accuracy(params, config, val);

  AdamW<float> optimizer({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  Rng shuffle_rng(derive_seed(config.seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_in_place(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const float inv_n = 1.0f / static_cast<float>(end - start);
      const std::size_t chunks = (end - start + kChunk - 1) / kChunk;
      std::vector<AitrParams<float>> shard_grads(chunks);
      std::vector<double> shard_loss(chunks, 0.0);
      std::vector<std::size_t> shard_correct(chunks, 0);
      parallel_for(chunks, [&](std::size_t c) {
        AitrParams<float>& g = shard_grads[c];
        g = params.zeros_like();
        SampleCache<float> cache;
        const std::size_t lo = start + c * kChunk, hi = std::min(end, lo + kChunk);
        for (std::size_t k = lo; k < hi; ++k) {
          const AitrExample<float>& ex = train[order[k]];
          Rng dropout_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), k));
          float logit;
          try {
            logit = forward_sample(params, config, build_input(ex, params, config), cache, &dropout_rng);
          } catch (const Error& e) {
            throw Error(ErrorKind::Diverged, std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
          }
          const auto target = static_cast<float>(ex.target);
          shard_loss[c] += nn::bce_with_logits(logit, target);
          shard_correct[c] += (logit >= 0.0f ? 1 : 0) == ex.target;
          backward_sample(params, config, cache, ex, (nn::sigmoid(logit) - target) * inv_n, g);
        }
      });
      AitrParams<float>& grad = shard_grads[0];
      for (std::size_t c = 1; c < chunks; ++c) {
        auto dst = tensors_of<float>(grad);
        auto src = tensors_of<float>(shard_grads[c]);
        for (std::size_t t = 0; t < dst.size(); ++t) {
          Eigen::Map<Eigen::ArrayXf>(dst[t].data, dst[t].size) += Eigen::Map<Eigen::ArrayXf>(src[t].data, src[t].size);
        }
      }
      for (std::size_t c = 0; c < chunks; ++c) {
        loss_sum += shard_loss[c];
        correct += shard_correct[c];
      }
      optimizer.step(params, grad);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (!std::isfinite(rec.train_loss)) {
      throw Error(ErrorKind::Diverged, "training loss is not finite at epoch " + std::to_string(epoch));
    }
    rec.val_accuracy = aitr_accuracy(params, config, val);
    hist.epochs.push_back(rec);
    if (rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      best = params;
      hist.best_epoch = epoch;
    }
    if (epoch - hist.best_epoch >= config.patience) {
      hist.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  fit.params = std::move(best);
  return fit;
}

AitrFit train_aitr(const Dataset& train, const Dataset& val, const AitrConfig& config) {
  return train_aitr(encode_dataset(train), encode_dataset(val), config);
}

std::vector<AitrConfig> default_grid(const AitrConfig& base) { return default_grid(base, {1e-4, 5e-5}, {256, 1024, 2048}); }

std::vector<AitrConfig> default_grid(const AitrConfig& base, const std::vector<double>& lrs,
                                     const std::vector<int>& ff_widths) {
  std::vector<AitrConfig> grid;
  const std::vector<std::vector<int>> head_options = {{4, 4, 4, 4}, {8, 8, 8, 8}, {1, 2, 4, 8}, {8, 4, 2, 1}};
  for (double lr : lrs) {
    for (int z : ff_widths) {
      for (std::size_t h = 0; h < head_options.size(); ++h) {
        if (base.pooling == Pooling::None && h >= 2) continue;
        AitrConfig c = base;
        c.lr = lr;
        c.ff_width = z;
        c.heads = head_options[h];
        c.n_layers = 4;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

GridResult grid_search(const std::vector<AitrExample<float>>& train, const std::vector<AitrExample<float>>& val,
                       const std::vector<AitrConfig>& grid) {
  if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty grid");
  GridResult result;
  bool any = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    GridCell cell;
    cell.config = grid[i];
    try {
      AitrFit fit = train_aitr(train, val, grid[i]);
      cell.val_accuracy = aitr_accuracy(fit.params, grid[i], val);
      cell.best_epoch = fit.history.best_epoch;
      if (!any || cell.val_accuracy > result.cells[result.best].val_accuracy) {
        result.best = i;
        result.best_fit = std::move(fit);
        any = true;
      }
    } catch (const Error& e) {
      cell.failed = true;
      cell.error = e.what();
    }
    result.cells.push_back(std::move(cell));
  }
  if (!any) throw Error(ErrorKind::Diverged, "every grid cell failed");
  return result;
}

std::string aitr_config_json(const AitrConfig& config) { return config_to_json(config).dump(); }

AitrConfig aitr_config_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, std::string("AITR config: ") + e.what());
  }
}

void save_aitr_checkpoint(const std::filesystem::path& path, const AitrParams<float>& params,
                          const AitrConfig& config) {
  auto& mutable_params = const_cast<AitrParams<float>&>(params);
  json header;
  header["config"] = config_to_json(config);
  json table = json::array();
  std::uint64_t offset = 0;
  std::vector<std::pair<const float*, Eigen::Index>> blocks;
  mutable_params.for_each_tensor([&](const std::string& name, auto& t) {
    table.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.size());
    blocks.emplace_back(t.data(), t.size());
  });
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u64_le(out, kCheckpointVersion);
  detail::write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [data, size] : blocks) {
    detail::write_f32_le(out, std::span<const float>(data, static_cast<std::size_t>(size)));
  }
  if (!out) throw Error(ErrorKind::IoFailure, "write failed: " + path.string());
}

std::pair<AitrParams<float>, AitrConfig> load_aitr_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  char magic[8];
  std::uint64_t version = 0, header_len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0 || !detail::read_u64_le(in, version) ||
      !detail::read_u64_le(in, header_len)) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": not an AITR checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": unsupported version " + std::to_string(version));
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": truncated header");
  }
  json header;
  AitrConfig config;
  try {
    header = json::parse(text);
    config = config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedRecord, path.string() + ": " + e.what());
  }
  AitrParams<float> params = init_aitr(config);
  std::size_t k = 0;
  const auto& table = header.at("tensors");
  params.for_each_tensor([&](const std::string& name, auto& t) {
    if (k >= table.size() || table[k].at("name").get<std::string>() != name ||
        table[k].at("rows").get<Eigen::Index>() != t.rows() || table[k].at("cols").get<Eigen::Index>() != t.cols()) {
      throw Error(ErrorKind::MalformedRecord, path.string() + ": tensor table does not match config at " + name);
    }
    ++k;
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw Error(ErrorKind::MalformedRecord, path.string() + ": truncated tensor " + name);
    }
    detail::f32_from_le(std::span<float>(t.data(), static_cast<std::size_t>(t.size())));
  });
  if (k != table.size()) throw Error(ErrorKind::MalformedRecord, path.string() + ": extra tensors");
  return {std::move(params), config};
}

}  // namespace muse
