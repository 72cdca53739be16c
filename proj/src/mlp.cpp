#include "mako/mlp.hpp"

#include <cmath>
#include <fstream>

#include "mako/binary_io.hpp"
#include "mako/error.hpp"
#include "mako/rng.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr io::Magic kMlpMagic{'M', 'A', 'K', 'O', 'M', 'L', 'P', '1'};
constexpr std::uint32_t kMlpVersion = 1;

MatrixXd activate(Activation act, const MatrixXd& z) {
  if (act == Activation::Relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

MatrixXd activate_grad(Activation act, const MatrixXd& z) {
  if (act == Activation::Relu) return (z.array() > 0.0).cast<double>().matrix();
  return (1.0 - z.array().tanh().square()).matrix();
}

}  // namespace

std::size_t MlpParams::num_params() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    total += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return total;
}

double MlpParams::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    s += weights[l].squaredNorm() + biases[l].squaredNorm();
  }
  return s;
}

bool MlpParams::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

MlpParams init_mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                   Activation activation, std::uint64_t seed) {
  if (input_dim < 1 || output_dim < 1) throw ArgumentError("init_mlp: dimensions must be positive");
  std::vector<int> sizes{input_dim};
  for (int w : hidden) {
    if (w < 1) throw ArgumentError("init_mlp: hidden widths must be positive");
    sizes.push_back(w);
  }
  sizes.push_back(output_dim);

  Rng rng(seed);
  MlpParams theta;
  theta.activation = activation;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = std::sqrt(6.0 / sizes[l]);
    MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -bound, bound);
    theta.weights.push_back(std::move(w));
    theta.biases.push_back(VectorXd::Zero(sizes[l + 1]));
  }
  return theta;
}

MlpParams zeros_like(const MlpParams& theta) {
  MlpParams z;
  z.activation = theta.activation;
  for (std::size_t l = 0; l < theta.weights.size(); ++l) {
    z.weights.push_back(MatrixXd::Zero(theta.weights[l].rows(), theta.weights[l].cols()));
    z.biases.push_back(VectorXd::Zero(theta.biases[l].size()));
  }
  return z;
}

std::vector<std::span<double>> param_spans(MlpParams& theta) {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < theta.weights.size(); ++l) {
    out.emplace_back(theta.weights[l].data(), static_cast<std::size_t>(theta.weights[l].size()));
    out.emplace_back(theta.biases[l].data(), static_cast<std::size_t>(theta.biases[l].size()));
  }
  return out;
}

std::vector<std::span<const double>> param_spans(const MlpParams& theta) {
  std::vector<std::span<const double>> out;
  for (std::size_t l = 0; l < theta.weights.size(); ++l) {
    out.emplace_back(theta.weights[l].data(), static_cast<std::size_t>(theta.weights[l].size()));
    out.emplace_back(theta.biases[l].data(), static_cast<std::size_t>(theta.biases[l].size()));
  }
  return out;
}

MatrixXd mlp_forward(const MlpParams& theta, const MatrixXd& x, MlpCache* cache) {
  if (theta.weights.empty()) throw ArgumentError("mlp_forward: empty network");
  if (x.rows() != theta.input_dim()) {
    throw ArgumentError("mlp_forward: input has " + std::to_string(x.rows()) +
                        " rows, network expects " + std::to_string(theta.input_dim()));
  }
  if (cache) {
    cache->layer_inputs.clear();
    cache->preacts.clear();
  }
  MatrixXd a = x;
  const std::size_t layers = theta.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    MatrixXd z = theta.weights[l] * a;
    z.colwise() += theta.biases[l];
    if (cache) {
      cache->layer_inputs.push_back(std::move(a));
      cache->preacts.push_back(z);
    }
    a = (l + 1 < layers) ? activate(theta.activation, z) : std::move(z);
  }
  return a;
}

VectorXd mlp_lift(const MlpParams& theta, const VectorXd& x) {
  return mlp_forward(theta, MatrixXd(x)).col(0);
}

MlpGradients mlp_backward(const MlpParams& theta, const MlpCache& cache,
                          const MatrixXd& upstream) {
  const std::size_t layers = theta.weights.size();
  if (cache.preacts.size() != layers || cache.layer_inputs.size() != layers) {
    throw ArgumentError("mlp_backward: cache does not match network");
  }
  if (upstream.rows() != theta.output_dim() || upstream.cols() != cache.preacts.back().cols()) {
    throw ArgumentError("mlp_backward: upstream shape mismatch");
  }
  MlpGradients grads;
  grads.theta = zeros_like(theta);
  MatrixXd dz = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    grads.theta.weights[l].noalias() = dz * cache.layer_inputs[l].transpose();
    grads.theta.biases[l] = dz.rowwise().sum();
    MatrixXd da = theta.weights[l].transpose() * dz;
    if (l == 0) {
      grads.input = std::move(da);
    } else {
      dz = da.cwiseProduct(activate_grad(theta.activation, cache.preacts[l - 1]));
    }
  }
  return grads;
}

void adam_step(std::span<const ParamBlock> blocks, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ArgumentError("adam_step: learning rate must be positive");
  for (const auto& b : blocks) {
    if (b.value.size() != b.grad.size()) throw ArgumentError("adam_step: block size mismatch");
    for (double g : b.grad) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient rejected");
    }
  }
  if (state.first.empty()) {
    for (const auto& b : blocks) {
      state.first.push_back(VectorXd::Zero(static_cast<Eigen::Index>(b.value.size())));
      state.second.push_back(VectorXd::Zero(static_cast<Eigen::Index>(b.value.size())));
    }
  }
  if (state.first.size() != blocks.size()) throw ArgumentError("adam_step: block count changed");

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (static_cast<std::size_t>(m.size()) != b.value.size()) {
      throw ArgumentError("adam_step: block shape changed");
    }
    for (std::size_t i = 0; i < b.value.size(); ++i) {
      const double g = b.grad[i] + b.weight_decay * b.value[i];
      const auto j = static_cast<Eigen::Index>(i);
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      b.value[i] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

void adam_step(MlpParams& theta, const MlpParams& grads, AdamState& state, double lr, double l2) {
  auto values = param_spans(theta);
  auto gs = param_spans(grads);
  if (values.size() != gs.size()) throw ArgumentError("adam_step: gradient shape mismatch");
  std::vector<ParamBlock> blocks;
  for (std::size_t k = 0; k < values.size(); ++k) blocks.push_back({values[k], gs[k], l2});
  adam_step(blocks, state, lr);
}

void write_mlp(std::ostream& out, const MlpParams& theta) {
  io::write_header(out, kMlpMagic, kMlpVersion);
  io::write_u32(out, static_cast<std::uint32_t>(theta.activation));
  io::write_u32(out, static_cast<std::uint32_t>(theta.weights.size()));
  for (std::size_t l = 0; l < theta.weights.size(); ++l) {
    io::write_matrix(out, theta.weights[l]);
    io::write_vector(out, theta.biases[l]);
  }
}

MlpParams read_mlp(std::istream& in) {
  io::read_header(in, kMlpMagic, kMlpVersion, "network checkpoint");
  MlpParams theta;
  const auto act = io::read_u32(in);
  if (act > 1) throw FormatError("network checkpoint: unknown activation tag");
  theta.activation = static_cast<Activation>(act);
  const auto layers = io::read_u32(in);
  if (layers == 0 || layers > 64) throw FormatError("network checkpoint: bad layer count");
  for (std::uint32_t l = 0; l < layers; ++l) {
    theta.weights.push_back(io::read_matrix(in));
    theta.biases.push_back(io::read_vector(in));
    if (theta.biases.back().size() != theta.weights.back().rows() ||
        (l > 0 && theta.weights[l].cols() != theta.weights[l - 1].rows())) {
      throw FormatError("network checkpoint: inconsistent layer shapes");
    }
  }
  return theta;
}

void save_mlp(const MlpParams& theta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  write_mlp(out, theta);
}

MlpParams load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_mlp(in);
}

bool operator==(const MlpParams& a, const MlpParams& b) {
  if (a.activation != b.activation || a.weights.size() != b.weights.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].rows() != b.weights[l].rows() || a.weights[l].cols() != b.weights[l].cols() ||
        a.biases[l].size() != b.biases[l].size() || a.weights[l] != b.weights[l] ||
        a.biases[l] != b.biases[l]) {
      return false;
    }
  }
  return true;
}

}  // namespace mako
