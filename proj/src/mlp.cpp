#include "muse/mlp.hpp"

#include <fstream>
#include <numeric>

namespace muse {

namespace {

double accuracy(const MlpParams<double>& p, const Eigen::MatrixXd& X, const Eigen::VectorXi& y) {
  const Eigen::VectorXd logits = mlp_logits(p, X);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) correct += (logits[i] >= 0.0 ? 1 : 0) == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

void round_to_binary32(MlpParams<double>& p) {
  p = p.cast<float>().cast<double>();
}

}  // namespace

MlpParams<double> fit_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXi& y, const FitConfig& config,
                          const TabularData* validation, TrainingHistory* history) {
  if (X.rows() == 0 || X.cols() == 0) throw Error(ErrorKind::EmptyInput, "no training rows");
  if (y.size() != X.rows()) throw Error(ErrorKind::DimMismatch, "label count differs from row count");
  if (config.mlp_hidden_width < 1 || config.batch_size < 1 || config.epochs < 0) {
    throw Error(ErrorKind::InvalidConfig, "mlp width, batch size and epochs must be positive");
  }

  MlpParams<double> params = init_mlp<double>(X.cols(), config.mlp_hidden_width, derive_seed(config.seed, 0));
  params.input_mean = X.colwise().mean().transpose();
  const Eigen::VectorXd var =
      (X.rowwise() - params.input_mean.transpose()).array().square().colwise().mean().transpose();
  params.input_scale = var.cwiseSqrt().unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });
  round_to_binary32(params);

  TrainingHistory local;
  TrainingHistory& hist = history ? *history : local;
  hist = {};
  hist.best_epoch = 0;

  MlpParams<double> best = params;
  double best_val = validation ? accuracy(params, validation->X, validation->y) : 0.0;

  AdamW<double> optimizer({config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  Rng rng(derive_seed(config.seed, 1));
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const auto m = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd xb(m, X.cols());
      Eigen::VectorXi yb(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        xb.row(k) = X.row(order[start + static_cast<std::size_t>(k)]);
        yb[k] = y[order[start + static_cast<std::size_t>(k)]];
      }
      MlpParams<double> grad;
      const double loss = mlp_loss_and_gradient(params, xb, yb, grad);
      if (!std::isfinite(loss)) throw Error(ErrorKind::Diverged, "MLP loss is not finite at epoch " + std::to_string(epoch));
      optimizer.step(params, grad);
      loss_sum += loss;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.train_accuracy = accuracy(params, X, y);
    if (validation) {
      rec.val_accuracy = accuracy(params, validation->X, validation->y);
      if (rec.val_accuracy > best_val) {
        best_val = rec.val_accuracy;
        best = params;
        hist.best_epoch = epoch;
      }
    } else {
      best = params;
      hist.best_epoch = epoch;
    }
    hist.epochs.push_back(rec);
    if (validation && epoch - hist.best_epoch >= config.patience) {
      hist.stopped_early = epoch < config.epochs;
      break;
    }
  }
  round_to_binary32(best);
  return best;
}

double predict_mlp(const MlpParams<double>& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::MatrixXd row = x.transpose();
  return nn::sigmoid(mlp_logits(params, row)[0]);
}

Eigen::VectorXd predict_mlp_batch(const MlpParams<double>& params, const Eigen::MatrixXd& X) {
  return mlp_logits(params, X).unaryExpr([](double v) { return nn::sigmoid(v); });
}

void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << "epoch,train_loss,train_accuracy,val_accuracy\n";
  char buf[128];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy);
    out << buf;
  }
}

}  // namespace muse
