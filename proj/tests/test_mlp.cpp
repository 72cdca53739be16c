#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "mako/error.hpp"
#include "mako/mlp.hpp"
#include "mako/rng.hpp"

using namespace mako;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  return MatrixXd::NullaryExpr(r, c, [&] { return uniform(rng, -scale, scale); });
}

// Randomizes biases too, so every parameter gets a nonzero gradient.
MlpParams random_net(int in, std::vector<int> hidden, int out, Activation act, std::uint64_t seed) {
  auto theta = init_mlp(in, hidden, out, act, seed);
  Rng rng(seed + 1);
  for (auto& b : theta.biases) b = random_matrix(rng, b.size(), 1, 0.3);
  return theta;
}

double half_weighted_output(const MlpParams& theta, const MatrixXd& x, const MatrixXd& w) {
  return 0.5 * (mlp_forward(theta, x).cwiseProduct(w)).sum();
}

double spectral_norm(const MatrixXd& W) {
  VectorXd v = VectorXd::Ones(W.cols()).normalized();
  double s = 0.0;
  for (int i = 0; i < 500; ++i) {
    const VectorXd w = W.transpose() * (W * v);
    s = std::sqrt(w.norm());
    v = w.normalized();
  }
  return s;
}

bool near_kink(const MlpParams& theta, const MatrixXd& x, double margin) {
  MlpCache cache;
  mlp_forward(theta, x, &cache);
  for (std::size_t l = 0; l + 1 < cache.preacts.size(); ++l) {
    if ((cache.preacts[l].array().abs() < margin).any()) return true;
  }
  return false;
}

void check_finite_differences(Activation act, std::uint64_t seed) {
  const int n = 3, h = 5, batch = 4;
  auto theta = random_net(n, {7, 6}, h, act, seed);
  Rng rng(seed + 100);
  MatrixXd x = random_matrix(rng, n, batch);
  while (act == Activation::Relu && near_kink(theta, x, 1e-3)) x = random_matrix(rng, n, batch);
  const MatrixXd w = random_matrix(rng, h, batch);

  MlpCache cache;
  mlp_forward(theta, x, &cache);
  const auto grads = mlp_backward(theta, cache, 0.5 * w);
  const auto analytic = param_spans(grads.theta);
  auto values = param_spans(theta);

  std::size_t total = 0;
  for (const auto& s : values) total += s.size();
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t flat = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    std::size_t block = 0;
    while (flat >= values[block].size()) flat -= values[block++].size();
    double& v = values[block][flat];
    const double saved = v, step = 1e-6;
    v = saved + step;
    const double up = half_weighted_output(theta, x, w);
    v = saved - step;
    const double down = half_weighted_output(theta, x, w);
    v = saved;
    const double fd = (up - down) / (2 * step);
    const double an = analytic[block][flat];
    CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), 1e-3));
  }

  for (int trial = 0; trial < 5; ++trial) {
    const auto i = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    const auto j = std::uniform_int_distribution<Eigen::Index>(0, batch - 1)(rng);
    MatrixXd xp = x, xm = x;
    xp(i, j) += 1e-6;
    xm(i, j) -= 1e-6;
    const double fd = (half_weighted_output(theta, xp, w) - half_weighted_output(theta, xm, w)) / 2e-6;
    CHECK(std::abs(fd - grads.input(i, j)) <= 1e-4 * std::max(std::abs(fd), 1e-3));
  }
}

}  // namespace

TEST_CASE("initialization shapes and bounds") {
  const auto theta = init_mlp(4, {128, 128}, 32, Activation::Relu, 7);
  REQUIRE(theta.num_layers() == 3);
  CHECK(theta.input_dim() == 4);
  CHECK(theta.output_dim() == 32);
  CHECK(theta.num_params() == 4 * 128 + 128 + 128 * 128 + 128 + 128 * 32 + 32);
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(theta.weights[l].cols()));
    CHECK(theta.weights[l].cwiseAbs().maxCoeff() <= bound);
    CHECK(theta.biases[l].isZero());
  }
  CHECK(init_mlp(4, {8}, 3, Activation::Relu, 7) == init_mlp(4, {8}, 3, Activation::Relu, 7));
  CHECK_FALSE(init_mlp(4, {8}, 3, Activation::Relu, 7) == init_mlp(4, {8}, 3, Activation::Relu, 8));
}

TEST_CASE("zero network lifts everything to zero") {
  const auto theta = zeros_like(init_mlp(4, {16, 16}, 8, Activation::Relu, 1));
  Rng rng(2);
  CHECK(mlp_forward(theta, random_matrix(rng, 4, 10, 5.0)).isZero());
}

TEST_CASE("positive-part pairs reproduce the input") {
  const int n = 3;
  MlpParams theta;
  theta.activation = Activation::Relu;
  MatrixXd split(2 * n, n);
  split << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
  MatrixXd merge(n, 2 * n);
  merge << MatrixXd::Identity(n, n), -MatrixXd::Identity(n, n);
  theta.weights = {split, MatrixXd::Identity(2 * n, 2 * n), merge};
  theta.biases = {VectorXd::Zero(2 * n), VectorXd::Zero(2 * n), VectorXd::Zero(n)};
  Rng rng(3);
  const MatrixXd x = random_matrix(rng, n, 20, 4.0);
  CHECK((mlp_forward(theta, x) - x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((mlp_lift(theta, x.col(0)) - x.col(0)).norm() < 1e-15);
}

TEST_CASE("lifting is Lipschitz with the product of layer norms") {
  const auto theta = random_net(4, {32, 32}, 16, Activation::Relu, 9);
  double lipschitz = 1.0;
  for (const auto& W : theta.weights) lipschitz *= spectral_norm(W);
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const VectorXd x = random_matrix(rng, 4, 1, 2.0);
    const VectorXd d = random_matrix(rng, 4, 1, 0.1);
    CHECK((mlp_lift(theta, x) - mlp_lift(theta, x + d)).norm() <= lipschitz * d.norm() * (1 + 1e-9));
  }
}

TEST_CASE("analytic gradients agree with central differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    check_finite_differences(Activation::Tanh, seed);
    check_finite_differences(Activation::Relu, seed);
  }
}

TEST_CASE("backward pass is linear in the cotangent") {
  const auto theta = random_net(3, {8, 8}, 4, Activation::Relu, 4);
  Rng rng(5);
  const MatrixXd x = random_matrix(rng, 3, 6);
  MlpCache cache;
  const MatrixXd g = mlp_forward(theta, x, &cache);

  const auto zero = mlp_backward(theta, cache, MatrixXd::Zero(4, 6));
  CHECK(zero.theta.squared_norm() == 0.0);
  CHECK(zero.input.isZero());

  const auto once = mlp_backward(theta, cache, 2.0 * g);
  const auto twice = mlp_backward(theta, cache, 4.0 * g);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK((twice.theta.weights[l] - 2.0 * once.theta.weights[l]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((twice.theta.biases[l] - 2.0 * once.theta.biases[l]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("shape mismatches are argument errors") {
  const auto theta = init_mlp(3, {4}, 2, Activation::Relu, 1);
  CHECK_THROWS_AS(mlp_forward(theta, MatrixXd::Zero(4, 2)), ArgumentError);
  MlpCache cache;
  mlp_forward(theta, MatrixXd::Zero(3, 2), &cache);
  CHECK_THROWS_AS(mlp_backward(theta, cache, MatrixXd::Zero(2, 3)), ArgumentError);
}

TEST_CASE("adam leaves parameters alone on a zero gradient") {
  auto theta = random_net(3, {4}, 2, Activation::Relu, 2);
  const auto before = theta;
  AdamState state;
  adam_step(theta, zeros_like(theta), state, 1e-3, 0.0);
  CHECK(theta == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam follows the scalar recurrence") {
  auto theta = random_net(2, {3}, 1, Activation::Relu, 6);
  auto grads = zeros_like(theta);
  Rng rng(7);
  const double lr = 1e-2, l2 = 0.05;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  auto values = param_spans(theta);
  std::vector<double> p, m, v;
  for (const auto& s : values) p.insert(p.end(), s.begin(), s.end());
  m.assign(p.size(), 0.0);
  v.assign(p.size(), 0.0);

  const std::vector<double> before = p;
  AdamState state;
  for (int t = 1; t <= 3; ++t) {
    for (auto& W : grads.weights) W = random_matrix(rng, W.rows(), W.cols());
    for (auto& b : grads.biases) b = random_matrix(rng, b.size(), 1);
    std::vector<double> g;
    for (const auto& s : param_spans(std::as_const(grads))) g.insert(g.end(), s.begin(), s.end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + l2 * p[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    adam_step(theta, grads, state, lr, l2);
    if (t == 1) {
      std::size_t i = 0;
      for (const auto& s : param_spans(std::as_const(theta))) {
        for (double x : s) {
          CHECK(std::abs(x - p[i]) < 1e-14);
          CHECK(std::abs(std::abs(x - before[i]) - lr) < 1e-9);
          ++i;
        }
      }
    }
  }
  std::size_t i = 0;
  for (const auto& s : param_spans(std::as_const(theta))) {
    for (double x : s) CHECK(std::abs(x - p[i++]) < 1e-13);
  }
}

TEST_CASE("weight decay alone shrinks the parameters") {
  auto theta = random_net(3, {5}, 2, Activation::Relu, 8);
  AdamState state;
  double prev = theta.squared_norm();
  for (int i = 0; i < 20; ++i) {
    adam_step(theta, zeros_like(theta), state, 1e-3, 1e-3);
    CHECK(theta.squared_norm() < prev);
    prev = theta.squared_norm();
  }
}

TEST_CASE("non-finite gradients are rejected without touching anything") {
  auto theta = random_net(3, {5}, 2, Activation::Relu, 8);
  const auto before = theta;
  auto grads = zeros_like(theta);
  grads.weights[1](0, 0) = std::numeric_limits<double>::infinity();
  AdamState state;
  CHECK_THROWS_AS(adam_step(theta, grads, state, 1e-3, 0.0), NumericError);
  CHECK(theta == before);
  CHECK(state.step == 0);
  grads.weights[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(theta, grads, state, 1e-3, 0.0), NumericError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto theta = random_net(4, {16, 8}, 6, Activation::Tanh, 12);
  std::stringstream buffer;
  write_mlp(buffer, theta);
  const auto back = read_mlp(buffer);
  CHECK(back == theta);
  CHECK(back.activation == Activation::Tanh);

  const auto path = std::filesystem::temp_directory_path() / "mako_test_mlp.bin";
  save_mlp(theta, path);
  CHECK(load_mlp(path) == theta);

  std::string bytes;
  {
    std::stringstream full;
    write_mlp(full, theta);
    bytes = full.str();
  }
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_mlp(cut), FormatError);
}
