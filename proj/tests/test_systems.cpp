#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "mako/error.hpp"
#include "mako/rng.hpp"
#include "mako/systems.hpp"

using namespace mako;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double exp_error(double dt) {
  const VectorField decay = [](const VectorXd& x, const VectorXd&) -> VectorXd { return -x; };
  return std::abs(rk4_integrate(decay, vec({1.0}), VectorXd(0), dt)[0] - std::exp(-dt));
}

// Damped Newton on the continuous-time field with a finite-difference Jacobian.
VectorXd newton_equilibrium(const SystemParams& p, VectorXd x, const VectorXd& u) {
  const auto n = x.size();
  for (int it = 0; it < 100; ++it) {
    const VectorXd f = derivative(p, x, u);
    if (f.norm() < 1e-11 * (1.0 + x.norm())) break;
    Eigen::MatrixXd J(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
      VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      J.col(j) = (derivative(p, xp, u) - derivative(p, xm, u)) / (2 * h);
    }
    const VectorXd dx = J.fullPivLu().solve(-f);
    double t = 1.0;
    while (t > 1e-6 && derivative(p, x + t * dx, u).norm() >= f.norm()) t *= 0.5;
    x += t * dx;
  }
  return x;
}

}  // namespace

TEST_CASE("rk4 matches the exponential and zero fields") {
  const VectorField decay = [](const VectorXd& x, const VectorXd&) -> VectorXd { return -x; };
  CHECK(std::abs(rk4_integrate(decay, vec({1.0}), VectorXd(0), 0.1)[0] - std::exp(-0.1)) < 1e-7);

  const VectorField zero = [](const VectorXd& x, const VectorXd&) -> VectorXd {
    return VectorXd::Zero(x.size());
  };
  const VectorXd x = vec({1.5, -2.0, 3.25});
  CHECK(rk4_integrate(zero, x, VectorXd(0), 0.3) == x);
}

TEST_CASE("rk4 one-step error shrinks at fifth order locally") {
  for (double dt : {0.2, 0.1, 0.05}) {
    const double ratio = exp_error(dt) / exp_error(dt / 2);
    CHECK(ratio >= std::pow(2.0, 3.8));
    CHECK(std::log2(ratio) >= 3.8);
  }
}

TEST_CASE("rk4 reports the first non-finite derivative component") {
  const VectorField bad = [](const VectorXd& x, const VectorXd&) -> VectorXd {
    VectorXd d = VectorXd::Zero(x.size());
    d[1] = std::numeric_limits<double>::quiet_NaN();
    return d;
  };
  try {
    rk4_integrate(bad, vec({0.0, 0.0, 0.0}), VectorXd(0), 0.1);
    FAIL("expected IntegrationError");
  } catch (const IntegrationError& e) {
    CHECK(e.component() == 1);
  }
}

TEST_CASE("cartpole upright equilibrium is a fixed point") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const VectorXd zero = VectorXd::Zero(4);
  CHECK(step(p, zero, vec({0.0})) == zero);
}

TEST_CASE("cartpole push to the right against a fine Euler integration") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const VectorXd u = vec({20.0});
  const VectorXd next = step(p, VectorXd::Zero(4), u);
  CHECK(next[1] > 0.0);
  CHECK(next[3] < 0.0);

  const double dt = control_interval(p);
  const int fine = 1000;
  VectorXd x = VectorXd::Zero(4);
  for (int i = 0; i < fine; ++i) x += (dt / fine) * derivative(p, x, u);
  CHECK((next - x).norm() < 1e-3 * (1.0 + x.norm()));
  CHECK(x[1] > 0.0);
  CHECK(x[3] < 0.0);
}

TEST_CASE("process steady state located by damped Newton is preserved by step") {
  const auto p = nominal_params(SystemKind::ReactorSeparator);
  const VectorXd us = p.constants.process.steady_input;
  const VectorXd xs = newton_equilibrium(p, setpoint(p), us);
  CHECK(derivative(p, xs, us).norm() < 1e-6);
  CHECK((step(p, xs, us) - xs).norm() < 1e-6);
  // the located steady state sits close to the published operating point
  CHECK((xs - setpoint(p)).cwiseAbs().maxCoeff() < 2.0);
}

TEST_CASE("grn steady state under constant light is preserved by step") {
  const auto p = nominal_params(SystemKind::Grn);
  const VectorXd u = VectorXd::Constant(3, 1.0);
  const VectorXd x0 = VectorXd::Constant(6, 2.0);
  const VectorXd xs = newton_equilibrium(p, x0, u);
  CHECK((xs.array() >= 0.0).all());
  CHECK((step(p, xs, u) - xs).norm() < 1e-6);
}

TEST_CASE("step is bitwise deterministic") {
  for (auto kind : {SystemKind::Cartpole, SystemKind::Grn, SystemKind::ReactorSeparator}) {
    const auto p = sample_params(kind, 17);
    Rng rng(3);
    const VectorXd x = sample_initial_state(p, rng);
    const VectorXd u = 0.5 * (input_lower(p) + input_upper(p));
    CHECK(step(p, x, u) == step(p, x, u));
  }
}

TEST_CASE("state blow-up raises a divergence error") {
  const auto p = nominal_params(SystemKind::Cartpole);
  CHECK_THROWS_AS(step(p, vec({2e9, 0.0, 0.0, 0.0}), vec({0.0})), DivergenceError);
}

TEST_CASE("inputs are clamped to the box") {
  const auto cart = nominal_params(SystemKind::Cartpole);
  CHECK(clamp_input(cart, vec({25.0}))[0] == 20.0);
  CHECK(clamp_input(cart, vec({-5.0}))[0] == -5.0);
  CHECK(clamp_input(cart, vec({-30.0}))[0] == -20.0);

  const auto proc = nominal_params(SystemKind::ReactorSeparator);
  const VectorXd clamped = clamp_input(proc, vec({5.0e6, 2.0e6, 5.0e6}));
  CHECK(clamped[0] == doctest::Approx(4.87e6));
  CHECK(clamped[1] == doctest::Approx(1.68e6));
  CHECK(clamped[2] == doctest::Approx(4.87e6));

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const VectorXd u = VectorXd::NullaryExpr(3, [&] { return uniform(rng, -1e7, 1e7); });
    const VectorXd once = clamp_input(proc, u);
    CHECK(clamp_input(proc, once) == once);
  }
}

TEST_CASE("cartpole reporting cost") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const double deg = std::numbers::pi / 180.0;
  CHECK(stage_cost(p, vec({10.0, 0.0, 0.0, 0.0})) == doctest::Approx(0.1));
  CHECK(stage_cost(p, VectorXd::Zero(4)) == 0.0);
  CHECK(stage_cost(p, vec({5.0, 0.0, 10.0 * deg, 0.0})) == doctest::Approx(0.275));
}

TEST_CASE("termination flag trips exactly beyond twenty degrees") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const double limit = 20.0 * std::numbers::pi / 180.0;
  CHECK_FALSE(pole_fallen(p, vec({0.0, 0.0, limit, 0.0})));
  CHECK(pole_fallen(p, vec({0.0, 0.0, std::nextafter(limit, 1.0), 0.0})));
  CHECK(pole_fallen(p, vec({0.0, 0.0, -0.4, 0.0})));
  CHECK_FALSE(pole_fallen(p, vec({9.0, 0.0, 0.3, 0.0})));
}

TEST_CASE("parameter sampling stays in range and is seeded") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = sample_params(SystemKind::Cartpole, seed);
    CHECK(p.uncertain[0] >= 0.1);
    CHECK(p.uncertain[0] <= 1.0);
    CHECK(p.uncertain[1] >= 0.01);
    CHECK(p.uncertain[1] <= 0.2);
  }
  const auto nominal = nominal_params(SystemKind::Cartpole);
  CHECK(nominal.uncertain[0] == 0.5);
  CHECK(nominal.uncertain[1] == 0.1);
  CHECK(sample_params(SystemKind::Grn, 9).uncertain == sample_params(SystemKind::Grn, 9).uncertain);
  CHECK(sample_params(SystemKind::Grn, 9).uncertain != sample_params(SystemKind::Grn, 10).uncertain);
}

TEST_CASE("parameter grids") {
  const auto cart = param_grid(SystemKind::Cartpole, 9);
  REQUIRE(cart.size() == 9);
  std::vector<double> lengths, masses;
  for (const auto& p : cart) {
    lengths.push_back(p.uncertain[0]);
    masses.push_back(p.uncertain[1]);
  }
  for (double l : {0.1, 0.55, 1.0}) {
    CHECK(std::count_if(lengths.begin(), lengths.end(),
                        [&](double v) { return std::abs(v - l) < 1e-12; }) == 3);
  }
  for (double m : {0.01, 0.105, 0.2}) {
    CHECK(std::count_if(masses.begin(), masses.end(),
                        [&](double v) { return std::abs(v - m) < 1e-12; }) == 3);
  }

  const auto mid = param_grid(SystemKind::Cartpole, 1);
  REQUIRE(mid.size() == 1);
  CHECK(mid[0].uncertain[0] == doctest::Approx(0.55));
  CHECK(mid[0].uncertain[1] == doctest::Approx(0.105));

  const auto grn = param_grid(SystemKind::Grn, 9);
  REQUIRE(grn.size() == 9);
  for (const auto& p : grn) {
    const double k = p.uncertain[0], b = p.uncertain[1];
    CHECK((k == 2.0 || k == 5.0 || k == 8.0));
    CHECK((b == 3.0 || b == 5.0 || b == 7.0));
  }
  CHECK_THROWS_AS(param_grid(SystemKind::Cartpole, 8), ArgumentError);
}

TEST_CASE("initial states follow each system's distribution") {
  Rng rng(11);
  const auto proc = nominal_params(SystemKind::ReactorSeparator);
  const VectorXd xs = setpoint(proc);
  for (int i = 0; i < 200; ++i) {
    const VectorXd x = sample_initial_state(proc, rng);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      CHECK(x[j] >= 0.8 * xs[j]);
      CHECK(x[j] <= 1.2 * xs[j]);
    }
  }
  const auto grn = nominal_params(SystemKind::Grn);
  for (int i = 0; i < 50; ++i) CHECK((sample_initial_state(grn, rng).array() >= 0.0).all());
}

TEST_CASE("shipped constants file equals the compiled-in coefficients") {
  const auto loaded = load_constants(MAKO_DEFAULT_CONSTANTS);
  CHECK(constants_to_json(loaded) == constants_to_json(default_constants()));
  CHECK(constants_to_json(constants_from_json(constants_to_json(default_constants()))) ==
        constants_to_json(default_constants()));
}
