#include "mako/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include "mako/binary_io.hpp"
#include "mako/error.hpp"
#include "mako/rng.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr io::Magic kModelMagic{'M', 'A', 'K', 'O', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::size_t kEvalChunk = 4096;

struct TaskGroup {
  std::vector<Eigen::Index> columns;  // positions inside the batch
};

std::map<int, TaskGroup> group_by_task(std::span<const WindowSample> windows, std::size_t tasks,
                                       int n, int m, int horizon) {
  std::map<int, TaskGroup> groups;
  for (std::size_t j = 0; j < windows.size(); ++j) {
    const auto& w = windows[j];
    if (w.task < 0 || static_cast<std::size_t>(w.task) >= tasks) {
      throw ArgumentError("window refers to unknown task " + std::to_string(w.task));
    }
    if (w.anchor.size() != n || w.inputs.rows() != m || w.targets.rows() != n ||
        w.inputs.cols() != horizon || w.targets.cols() != horizon) {
      throw ArgumentError("window shape does not match the model");
    }
    groups[w.task].columns.push_back(static_cast<Eigen::Index>(j));
  }
  return groups;
}

}  // namespace

void KoopmanOps::check_shapes() const {
  if (A.rows() != A.cols() || B.rows() != A.rows() || C.cols() != A.rows() || A.rows() == 0) {
    throw ArgumentError("Koopman operators have inconsistent shapes");
  }
}

MatrixXd rollout_predict(const KoopmanOps& ops, const VectorXd& g0, const MatrixXd& u_seq) {
  ops.check_shapes();
  if (g0.size() != ops.A.rows() || u_seq.rows() != ops.B.cols()) {
    throw ArgumentError("rollout_predict: shape mismatch");
  }
  MatrixXd out(ops.C.rows(), u_seq.cols());
  VectorXd g = g0;
  for (Eigen::Index t = 0; t < u_seq.cols(); ++t) {
    g = ops.A * g + ops.B * u_seq.col(t);
    out.col(t) = ops.C * g;
  }
  return out;
}

double meta_loss_and_grads(const MakoModel& model, std::span<const WindowSample> windows,
                           double l2, MetaGradients* grads) {
  if (windows.empty()) throw ArgumentError("meta_loss_and_grads: empty minibatch");
  const int n = model.theta.input_dim();
  const int m = static_cast<int>(model.ops.front().B.cols());
  const int H = static_cast<int>(windows.front().targets.cols());
  const auto groups = group_by_task(windows, model.ops.size(), n, m, H);
  const auto batch = static_cast<Eigen::Index>(windows.size());

  MatrixXd anchors(n, batch);
  for (Eigen::Index j = 0; j < batch; ++j) anchors.col(j) = windows[static_cast<std::size_t>(j)].anchor;
  MlpCache cache;
  const MatrixXd g0_all = mlp_forward(model.theta, anchors, grads ? &cache : nullptr);
  const int h = static_cast<int>(g0_all.rows());

  const double scale = 1.0 / (static_cast<double>(batch) * H);
  double sse = 0.0;
  MatrixXd dg0_all;
  if (grads) {
    dg0_all = MatrixXd::Zero(h, batch);
    grads->ops.clear();
    for (const auto& op : model.ops) {
      grads->ops.push_back({MatrixXd::Zero(op.A.rows(), op.A.cols()),
                            MatrixXd::Zero(op.B.rows(), op.B.cols()),
                            MatrixXd::Zero(op.C.rows(), op.C.cols()), op.task_index});
    }
  }

  for (const auto& [task, group] : groups) {
    const auto& op = model.ops[static_cast<std::size_t>(task)];
    op.check_shapes();
    if (op.A.rows() != h) throw ArgumentError("operator dimension differs from the network output");
    const auto b = static_cast<Eigen::Index>(group.columns.size());
    std::vector<MatrixXd> g(static_cast<std::size_t>(H) + 1);
    std::vector<MatrixXd> u(static_cast<std::size_t>(H)), r(static_cast<std::size_t>(H));
    g[0].resize(h, b);
    for (Eigen::Index j = 0; j < b; ++j) g[0].col(j) = g0_all.col(group.columns[static_cast<std::size_t>(j)]);
    for (int t = 0; t < H; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      u[ts].resize(m, b);
      MatrixXd target(n, b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto& w = windows[static_cast<std::size_t>(group.columns[static_cast<std::size_t>(j)])];
        u[ts].col(j) = w.inputs.col(t);
        target.col(j) = w.targets.col(t);
      }
      g[ts + 1].noalias() = op.A * g[ts];
      g[ts + 1].noalias() += op.B * u[ts];
      r[ts].noalias() = op.C * g[ts + 1];
      r[ts] -= target;
      sse += r[ts].squaredNorm();
    }
    if (!grads) continue;

    auto& d = grads->ops[static_cast<std::size_t>(task)];
    MatrixXd lambda = MatrixXd::Zero(h, b);
    for (int t = H; t >= 1; --t) {
      const auto ts = static_cast<std::size_t>(t);
      MatrixXd dr = (2.0 * scale) * r[ts - 1];
      d.C.noalias() += dr * g[ts].transpose();
      MatrixXd next = op.A.transpose() * lambda;
      next.noalias() += op.C.transpose() * dr;
      lambda = std::move(next);
      d.A.noalias() += lambda * g[ts - 1].transpose();
      d.B.noalias() += lambda * u[ts - 1].transpose();
    }
    const MatrixXd dg0 = op.A.transpose() * lambda;
    for (Eigen::Index j = 0; j < b; ++j) dg0_all.col(group.columns[static_cast<std::size_t>(j)]) = dg0.col(j);
  }

  const double loss = sse * scale + l2 * model.theta.squared_norm();
  if (grads) {
    grads->theta = mlp_backward(model.theta, cache, dg0_all).theta;
    if (l2 != 0.0) {
      for (std::size_t l = 0; l < model.theta.weights.size(); ++l) {
        grads->theta.weights[l] += 2.0 * l2 * model.theta.weights[l];
        grads->theta.biases[l] += 2.0 * l2 * model.theta.biases[l];
      }
    }
  }
  return loss;
}

double eval_prediction_error(const MakoModel& model, std::span<const WindowSample> windows) {
  if (windows.empty()) throw ArgumentError("eval_prediction_error: split has no windows");
  double total = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += kEvalChunk) {
    const auto chunk = windows.subspan(start, std::min(kEvalChunk, windows.size() - start));
    total += meta_loss_and_grads(model, chunk, 0.0, nullptr) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(windows.size());
}

double eval_prediction_error(const MakoModel& model, const MetaDataset& normalized_meta,
                             Split split) {
  const auto windows = anchored_windows(normalized_meta, split, model.echo.horizon);
  return eval_prediction_error(model, windows);
}

MakoModel init_model(const MetaDataset& meta, const TrainConfig& config) {
  if (!meta.normalized) throw ArgumentError("init_model: dataset must be normalized");
  if (config.horizon < 1 || config.obs_dim < 1) throw ArgumentError("init_model: bad dimensions");
  const auto [n, m] = data_dims(meta);
  MakoModel model;
  model.theta = init_mlp(n, config.hidden, config.obs_dim, config.activation,
                         derive_seed(config.seed, 1));
  model.norm = meta.norm;
  model.echo = {meta.kind, config.horizon, n, m, config.obs_dim, config.hidden, meta.seed,
                config.seed};
  const int h = config.obs_dim;

  for (std::size_t i = 0; i < meta.subdatasets.size(); ++i) {
    MatrixXd states(n, 0);
    for (const auto& ep : meta.subdatasets[i].episodes) {
      if (ep.split != Split::Train) continue;
      const Eigen::Index take = std::min<Eigen::Index>(ep.length(), config.warmup_samples - states.cols());
      if (take <= 0) break;
      states.conservativeResize(n, states.cols() + take);
      states.rightCols(take) = ep.states.leftCols(take);
    }
    KoopmanOps op;
    op.A = MatrixXd::Identity(h, h);
    op.B = MatrixXd::Zero(h, m);
    op.task_index = static_cast<int>(i);
    if (states.cols() == 0) {
      op.C = MatrixXd::Zero(n, h);
    } else {
      const MatrixXd g = mlp_forward(model.theta, states);
      MatrixXd gram = g * g.transpose();
      const double ridge = 1e-6 * (gram.trace() / h + 1.0);
      gram.diagonal().array() += ridge;
      op.C = gram.ldlt().solve(g * states.transpose()).transpose();
    }
    model.ops.push_back(std::move(op));
  }
  return model;
}

TrainResult train(const MetaDataset& meta, const TrainConfig& config) {
  if (config.batch_size < 1 || config.epochs < 0 || !(config.learning_rate > 0.0)) {
    throw ArgumentError("train: invalid optimizer settings");
  }
  const auto train_windows = anchored_windows(meta, Split::Train, config.horizon);
  const auto val_windows = anchored_windows(meta, Split::Validation, config.horizon);
  const auto test_windows = anchored_windows(meta, Split::Test, config.horizon);
  if (train_windows.empty()) throw ArgumentError("train: training split has no complete windows");

  TrainResult result;
  MakoModel model = init_model(meta, config);
  result.model = model;
  result.report.best_validation = std::numeric_limits<double>::infinity();

  AdamState adam;
  MetaGradients grads;
  std::vector<std::size_t> order(train_windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<WindowSample> batch;

  auto eval_or_nan = [&](const std::vector<WindowSample>& w) {
    return w.empty() ? std::numeric_limits<double>::quiet_NaN() : eval_prediction_error(model, w);
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size() && !result.report.aborted;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t j = start; j < stop; ++j) batch.push_back(train_windows[order[j]]);

      const double loss = meta_loss_and_grads(model, batch, 0.0, &grads);
      if (!std::isfinite(loss)) {
        result.report.aborted = true;
        result.report.abort_reason =
            "non-finite loss in epoch " + std::to_string(epoch) + "; kept last good checkpoint";
        break;
      }

      std::vector<ParamBlock> blocks;
      auto values = param_spans(model.theta);
      auto gvals = param_spans(std::as_const(grads.theta));
      for (std::size_t k = 0; k < values.size(); ++k) {
        blocks.push_back({values[k], gvals[k], 2.0 * config.l2});
      }
      for (std::size_t i = 0; i < model.ops.size(); ++i) {
        for (auto [value, grad] : {std::pair{&model.ops[i].A, &grads.ops[i].A},
                                   std::pair{&model.ops[i].B, &grads.ops[i].B},
                                   std::pair{&model.ops[i].C, &grads.ops[i].C}}) {
          blocks.push_back({std::span<double>(value->data(), static_cast<std::size_t>(value->size())),
                            std::span<const double>(grad->data(), static_cast<std::size_t>(grad->size())),
                            0.0});
        }
      }
      try {
        adam_step(blocks, adam, config.learning_rate);
      } catch (const NumericError& e) {
        result.report.aborted = true;
        result.report.abort_reason = std::string(e.what()) + " in epoch " + std::to_string(epoch);
      }
    }
    if (result.report.aborted) break;

    EpochStats stats;
    stats.epoch = epoch;
    stats.train = eval_prediction_error(model, train_windows);
    stats.validation = eval_or_nan(val_windows);
    stats.test = eval_or_nan(test_windows);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(epoch, stats.train, stats.validation, stats.test);

    if (!std::isfinite(stats.train)) {
      result.report.aborted = true;
      result.report.abort_reason =
          "non-finite loss in epoch " + std::to_string(epoch) + "; kept last good checkpoint";
      break;
    }
    // without a validation split, selection falls back to the training error
    const double score = val_windows.empty() ? stats.train : stats.validation;
    if (score < result.report.best_validation) {
      result.report.best_validation = score;
      result.report.best_epoch = epoch;
      result.model = model;
    }
  }
  if (result.report.best_epoch == 0 && !result.report.aborted) result.model = model;
  return result;
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "# mako-train-curve v1\n";
  out << "epoch,train,validation,test,seconds\n";
  out.precision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train << ',' << e.validation << ',' << e.test << ',' << e.seconds
        << '\n';
  }
}

void save_model(const MakoModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  io::write_header(out, kModelMagic, kModelVersion);
  const auto& e = model.echo;
  io::write_u32(out, static_cast<std::uint32_t>(e.kind));
  io::write_u32(out, static_cast<std::uint32_t>(e.horizon));
  io::write_u32(out, static_cast<std::uint32_t>(e.state_dim));
  io::write_u32(out, static_cast<std::uint32_t>(e.input_dim));
  io::write_u32(out, static_cast<std::uint32_t>(e.obs_dim));
  io::write_u32(out, static_cast<std::uint32_t>(e.hidden.size()));
  for (int w : e.hidden) io::write_u32(out, static_cast<std::uint32_t>(w));
  io::write_u64(out, e.data_seed);
  io::write_u64(out, e.train_seed);
  io::write_vector(out, model.norm.state_mean);
  io::write_vector(out, model.norm.state_std);
  io::write_vector(out, model.norm.input_mean);
  io::write_vector(out, model.norm.input_std);
  write_mlp(out, model.theta);
  io::write_u64(out, model.ops.size());
  for (const auto& op : model.ops) {
    io::write_u32(out, static_cast<std::uint32_t>(op.task_index));
    io::write_matrix(out, op.A);
    io::write_matrix(out, op.B);
    io::write_matrix(out, op.C);
  }
  if (!out) throw ArgumentError("failed writing " + path.string());
}

MakoModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  io::read_header(in, kModelMagic, kModelVersion, "model checkpoint");
  MakoModel model;
  auto& e = model.echo;
  const auto kind = io::read_u32(in);
  if (kind > 2) throw FormatError("model checkpoint: unknown system kind");
  e.kind = static_cast<SystemKind>(kind);
  e.horizon = static_cast<int>(io::read_u32(in));
  e.state_dim = static_cast<int>(io::read_u32(in));
  e.input_dim = static_cast<int>(io::read_u32(in));
  e.obs_dim = static_cast<int>(io::read_u32(in));
  const auto hidden = io::read_u32(in);
  if (hidden > 64) throw FormatError("model checkpoint: bad hidden layer count");
  for (std::uint32_t k = 0; k < hidden; ++k) e.hidden.push_back(static_cast<int>(io::read_u32(in)));
  e.data_seed = io::read_u64(in);
  e.train_seed = io::read_u64(in);
  model.norm.state_mean = io::read_vector(in);
  model.norm.state_std = io::read_vector(in);
  model.norm.input_mean = io::read_vector(in);
  model.norm.input_std = io::read_vector(in);
  model.theta = read_mlp(in);
  const auto count = io::read_u64(in);
  if (count > 100000) throw FormatError("model checkpoint: implausible operator count");
  for (std::uint64_t i = 0; i < count; ++i) {
    KoopmanOps op;
    op.task_index = static_cast<int>(io::read_u32(in));
    op.A = io::read_matrix(in);
    op.B = io::read_matrix(in);
    op.C = io::read_matrix(in);
    op.check_shapes();
    model.ops.push_back(std::move(op));
  }
  if (model.theta.input_dim() != e.state_dim || model.theta.output_dim() != e.obs_dim) {
    throw FormatError("model checkpoint: network shape disagrees with header");
  }
  return model;
}

bool operator==(const MakoModel& a, const MakoModel& b) {
  auto same = [](const MatrixXd& x, const MatrixXd& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  const auto& ea = a.echo;
  const auto& eb = b.echo;
  if (ea.kind != eb.kind || ea.horizon != eb.horizon || ea.state_dim != eb.state_dim ||
      ea.input_dim != eb.input_dim || ea.obs_dim != eb.obs_dim || ea.hidden != eb.hidden ||
      ea.data_seed != eb.data_seed || ea.train_seed != eb.train_seed) {
    return false;
  }
  if (!same(a.norm.state_mean, b.norm.state_mean) || !same(a.norm.state_std, b.norm.state_std) ||
      !same(a.norm.input_mean, b.norm.input_mean) || !same(a.norm.input_std, b.norm.input_std)) {
    return false;
  }
  if (!(a.theta == b.theta) || a.ops.size() != b.ops.size()) return false;
  for (std::size_t i = 0; i < a.ops.size(); ++i) {
    if (a.ops[i].task_index != b.ops[i].task_index || !same(a.ops[i].A, b.ops[i].A) ||
        !same(a.ops[i].B, b.ops[i].B) || !same(a.ops[i].C, b.ops[i].C)) {
      return false;
    }
  }
  return true;
}

}  // namespace mako
