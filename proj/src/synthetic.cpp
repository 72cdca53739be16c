#include "mako/synthetic.hpp"

#include <cmath>

#include "mako/error.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  MatrixXd out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  return out;
}

}  // namespace

KoopmanOps make_lifted_linear_plant(int obs_dim, int input_dim, int state_dim, double radius,
                                    std::uint64_t seed) {
  if (obs_dim < 1 || input_dim < 0 || state_dim < 1) {
    throw ArgumentError("make_lifted_linear_plant: bad dimensions");
  }
  Rng rng(seed);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(gaussian(rng, obs_dim, obs_dim))
                         .householderQ() * MatrixXd::Identity(obs_dim, obs_dim);
  KoopmanOps ops;
  ops.A = radius * q;
  ops.B = gaussian(rng, obs_dim, input_dim);
  ops.C = gaussian(rng, state_dim, obs_dim);
  return ops;
}

VectorXd sample_ball(Rng& rng, int dim, double radius) {
  if (radius <= 0.0) return VectorXd::Zero(dim);
  std::normal_distribution<double> normal;
  VectorXd dir(dim);
  for (int i = 0; i < dim; ++i) dir[i] = normal(rng);
  const double r = radius * std::pow(uniform(rng, 0.0, 1.0), 1.0 / dim);
  return dir.normalized() * r;
}

AdaptStudyResult run_adaptation_study(const AdaptStudyConfig& config) {
  AdaptStudyResult result;
  result.truth = make_lifted_linear_plant(config.obs_dim, config.input_dim, config.state_dim,
                                          config.radius, derive_seed(config.seed, 0));
  const auto& truth = result.truth;
  Rng rng(derive_seed(config.seed, 1));

  AdaptiveOps ops;
  ops.psi.resize(config.obs_dim, config.obs_dim + config.input_dim);
  ops.psi << truth.A, truth.B;
  ops.psi += gaussian(rng, ops.psi.rows(), ops.psi.cols(), config.init_perturbation);
  ops.c = truth.C + gaussian(rng, truth.C.rows(), truth.C.cols(), config.init_perturbation);
  result.initial_lyapunov = lyapunov_value(ops, truth);

  VectorXd g = gaussian(rng, config.obs_dim, 1);
  result.trace.reserve(static_cast<std::size_t>(config.steps));
  for (int k = 0; k < config.steps; ++k) {
    VectorXd u(config.input_dim);
    for (int j = 0; j < config.input_dim; ++j) {
      u[j] = uniform(rng, -config.input_amplitude, config.input_amplitude);
    }
    const VectorXd g_next = truth.A * g + truth.B * u + sample_ball(rng, config.obs_dim, config.noise_w);
    const VectorXd x_next = truth.C * g_next + sample_ball(rng, config.state_dim, config.noise_v);
    AdaptRecord rec = adapt_step(ops, g, u, g_next, x_next, config.adapt);
    rec.lyapunov = lyapunov_value(ops, truth);
    result.trace.push_back(rec);
    g = g_next;
  }
  result.final_ops = std::move(ops);
  return result;
}

}  // namespace mako
