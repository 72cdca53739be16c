#pragma once

// Joint training of the shared lifting network and per-task linear operators
// on the multi-step prediction objective.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mako/dataset.hpp"
#include "mako/mlp.hpp"

namespace mako {

struct KoopmanOps {
  Eigen::MatrixXd A;  // h x h
  Eigen::MatrixXd B;  // h x m
  Eigen::MatrixXd C;  // n x h
  int task_index = 0;

  /// Throws ArgumentError unless the three shapes agree with each other.
  void check_shapes() const;
};

struct ModelEcho {
  SystemKind kind = SystemKind::Cartpole;
  int horizon = 16;
  int state_dim = 0, input_dim = 0, obs_dim = 0;
  std::vector<int> hidden;
  std::uint64_t data_seed = 0, train_seed = 0;
};

struct MakoModel {
  MlpParams theta;
  std::vector<KoopmanOps> ops;
  NormStats norm;
  ModelEcho echo;
};

/// Predicted states C g_1 .. C g_H with g_{t+1} = A g_t + B u_t; returns n x H.
Eigen::MatrixXd rollout_predict(const KoopmanOps& ops, const Eigen::VectorXd& g0,
                                const Eigen::MatrixXd& u_seq);

struct MetaGradients {
  MlpParams theta;
  std::vector<KoopmanOps> ops;
};

/// Mean over windows and steps of the squared prediction error (summed over
/// state dimensions) plus l2 * ||theta||^2. When `grads` is given it receives
/// the exact gradient of the returned value. Windows must carry task indices
/// within the model's operator list.
double meta_loss_and_grads(const MakoModel& model, std::span<const WindowSample> windows,
                           double l2, MetaGradients* grads);

struct TrainConfig {
  int obs_dim = 32;
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::Relu;
  int horizon = 16;
  int batch_size = 128;
  double learning_rate = 1e-4;
  double l2 = 1e-3;
  int epochs = 50;
  std::uint64_t seed = 0;
  int warmup_samples = 2048;  // per task, for the initial least-squares decode
  std::function<void(int epoch, double train, double validation, double test)> on_epoch;
};

struct EpochStats {
  int epoch = 0;
  double train = 0.0, validation = 0.0, test = 0.0, seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_validation = 0.0;
  bool aborted = false;
  std::string abort_reason;

  void write_csv(const std::filesystem::path& path) const;
};

/// Network from the config seed, A = I, B = 0 and C fitted by ridge least
/// squares of the states on the initial lifting.
MakoModel init_model(const MetaDataset& normalized_meta, const TrainConfig& config);

struct TrainResult {
  MakoModel model;  // best-validation checkpoint
  TrainReport report;
};

/// Minibatch Adam over shuffled anchored windows; one optimizer for the
/// network and all operators. Stops early with `aborted` set on a non-finite
/// loss, returning the last good checkpoint.
TrainResult train(const MetaDataset& normalized_meta, const TrainConfig& config);

/// Mean H-step squared prediction error over every window of the split.
double eval_prediction_error(const MakoModel& model, const MetaDataset& normalized_meta,
                             Split split);
double eval_prediction_error(const MakoModel& model, std::span<const WindowSample> windows);

void save_model(const MakoModel& model, const std::filesystem::path& path);
MakoModel load_model(const std::filesystem::path& path);

bool operator==(const MakoModel& a, const MakoModel& b);

}  // namespace mako
