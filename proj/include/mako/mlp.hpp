#pragma once

// Feed-forward observable network: batched forward/backward passes, Adam and
// a checkpoint format. Samples are stored column-wise.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace mako {

enum class Activation : std::uint32_t { Relu = 0, Tanh = 1 };

struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is fan_out x fan_in
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Relu;

  int input_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
  int output_dim() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_params() const;
  double squared_norm() const;
  bool all_finite() const;
};

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
MlpParams init_mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                   Activation activation, std::uint64_t seed);
MlpParams zeros_like(const MlpParams& theta);

/// Writable views over every weight and bias buffer, in a fixed order.
std::vector<std::span<double>> param_spans(MlpParams& theta);
std::vector<std::span<const double>> param_spans(const MlpParams& theta);

struct MlpCache {
  std::vector<Eigen::MatrixXd> layer_inputs;  // activations feeding each layer
  std::vector<Eigen::MatrixXd> preacts;       // pre-activations of each layer
};

/// x is n x B; returns h x B. Hidden layers use the activation, the last is linear.
Eigen::MatrixXd mlp_forward(const MlpParams& theta, const Eigen::MatrixXd& x,
                            MlpCache* cache = nullptr);
Eigen::VectorXd mlp_lift(const MlpParams& theta, const Eigen::VectorXd& x);

struct MlpGradients {
  MlpParams theta;        // same shapes as the parameters
  Eigen::MatrixXd input;  // n x B
};

/// Reverse pass for a cotangent `upstream` (h x B) on the forward output.
MlpGradients mlp_backward(const MlpParams& theta, const MlpCache& cache,
                          const Eigen::MatrixXd& upstream);

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Eigen::VectorXd> first, second;  // one entry per parameter block
  long step = 0;
};

struct ParamBlock {
  std::span<double> value;
  std::span<const double> grad;
  double weight_decay = 0.0;  // added to the gradient as weight_decay * value
};

/// One Adam update with bias correction over all blocks. All gradients are
/// checked first; a non-finite entry throws NumericError and nothing changes.
void adam_step(std::span<const ParamBlock> blocks, AdamState& state, double lr);

/// Network-only convenience: gradient plus l2 * theta, then Adam.
void adam_step(MlpParams& theta, const MlpParams& grads, AdamState& state, double lr, double l2);

void write_mlp(std::ostream& out, const MlpParams& theta);
MlpParams read_mlp(std::istream& in);
void save_mlp(const MlpParams& theta, const std::filesystem::path& path);
MlpParams load_mlp(const std::filesystem::path& path);

bool operator==(const MlpParams& a, const MlpParams& b);

}  // namespace mako
