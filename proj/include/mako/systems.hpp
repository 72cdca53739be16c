#pragma once

// Parametric benchmark plants: cartpole, a three-gene repressilator driven by
// light inputs, and a two-reactor/flash-separator process. All simulators are
// pure functions of their arguments.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "mako/rng.hpp"

namespace mako {

enum class SystemKind { Cartpole, Grn, ReactorSeparator };

std::string_view to_string(SystemKind kind);
SystemKind parse_system_kind(std::string_view name);
int state_dim(SystemKind kind);
int input_dim(SystemKind kind);

struct CartpoleConstants {
  double cart_mass = 1.0;          // kg
  double gravity = 9.8;            // m/s^2
  double dt = 0.02;                // s
  double force_limit = 20.0;       // N, symmetric box
  double x_threshold = 10.0;       // m
  double theta_threshold_deg = 20.0;
  double init_spread = 0.05;       // uniform half-width of initial states
  double length_lo = 0.1, length_hi = 1.0, length_nominal = 0.5;
  double mass_lo = 0.01, mass_hi = 0.2, mass_nominal = 0.1;
  int substeps = 1;
};

struct GrnConstants {
  double max_transcription = 50.0;  // maximal repressed-promoter activity
  double leak = 0.2;                // basal transcription
  double hill = 2.0;                // cooperativity
  double protein_rate = 1.0;        // protein turnover relative to mRNA
  double gain_2 = 5.0;              // light-input gains of genes 2 and 3
  double gain_3 = 5.0;
  double input_max = 10.0;          // each light channel lies in [0, input_max]
  double dt = 0.5;
  double init_lo = 0.0, init_hi = 10.0;
  double protein1_setpoint = 6.0;
  double k_lo = 2.0, k_hi = 8.0, k_nominal = 5.0;
  double b1_lo = 3.0, b1_hi = 7.0, b1_nominal = 5.0;
  int substeps = 1;
};

struct ProcessConstants {
  double feed1 = 8.0, feed2 = 4.6;          // fresh feeds F10, F20 (m^3/h)
  double recycle = 9.4, purge = 0.5;        // Fr, Fp (m^3/h)
  double volume1 = 1.0, volume2 = 0.5, volume3 = 1.0;  // m^3
  double activation1 = 5.0e4, activation2 = 6.0e4;     // kJ/kmol
  double preexp1 = 1.246e7, preexp2 = 1.191e7;         // 1/h
  double gas_constant = 8.314;
  double density = 1000.0;                  // kg/m^3
  double heat_capacity = 4.2;               // kJ/(kg K)
  double reaction_heat1 = 80.0;             // temperature rise per unit rate (K)
  double reaction_heat2 = 80.0;
  double vaporization_cooling = 50.0;       // K per unit overhead flow
  double volatility_a = 5.273, volatility_b = 0.8401, volatility_c = 0.08376;
  double feed_fraction_a = 1.0;             // both feeds are pure A
  Eigen::VectorXd setpoint = (Eigen::VectorXd(9) << 0.18, 0.67, 480.3, 0.19, 0.65,
                              472.8, 0.06, 0.67, 474.9).finished();
  Eigen::VectorXd input_upper =
      (Eigen::VectorXd(3) << 4.87e6, 1.68e6, 4.87e6).finished();  // kJ/h
  Eigen::VectorXd steady_input =
      (Eigen::VectorXd(3) << 2.722e6, 1.295e6, 2.273e6).finished();
  double dt = 0.005;  // h
  int substeps = 10;
  double t_lo = 150.0, t_hi = 450.0, t_nominal = 300.0;
};

struct SystemConstants {
  CartpoleConstants cartpole;
  GrnConstants grn;
  ProcessConstants process;
};

/// Compiled-in coefficients; identical to config/system_constants.json.
const SystemConstants& default_constants();
SystemConstants load_constants(const std::filesystem::path& path);
void save_constants(const SystemConstants& constants, const std::filesystem::path& path);
std::string constants_to_json(const SystemConstants& constants);
SystemConstants constants_from_json(const std::string& text);

/// One task setting: the uncertain parameters plus the fixed coefficients.
///   Cartpole:          uncertain = (pole length l_p [m], pole mass m_p [kg])
///   Grn:               uncertain = (dissociation constant K, input gain b_1)
///   ReactorSeparator:  uncertain = (feed temperature T10 [K], T20 [K])
struct SystemParams {
  SystemKind kind = SystemKind::Cartpole;
  Eigen::Vector2d uncertain = Eigen::Vector2d::Zero();
  SystemConstants constants = default_constants();
};

using VectorField =
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// One classical RK4 step. Throws IntegrationError naming the first
/// non-finite derivative component.
Eigen::VectorXd rk4_integrate(const VectorField& deriv, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u, double dt);

/// Continuous-time right-hand side of the plant ODE.
Eigen::VectorXd derivative(const SystemParams& params, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u);

double control_interval(const SystemParams& params);

/// Advance one control interval. Mass fractions are clipped to [0,1] and
/// concentrations to [0,inf) after integration. Throws DivergenceError when
/// any entry exceeds 1e9 in magnitude.
Eigen::VectorXd step(const SystemParams& params, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& u);

Eigen::VectorXd input_lower(const SystemParams& params);
Eigen::VectorXd input_upper(const SystemParams& params);
Eigen::VectorXd clamp_input(const SystemParams& params, const Eigen::VectorXd& u);

/// Cartpole reporting cost 0.1 (x/x_thr)^2 + (theta/theta_thr)^2.
double stage_cost(const SystemParams& params, const Eigen::VectorXd& x);

/// Cartpole early-termination flag: |theta| beyond the angle threshold.
bool pole_fallen(const SystemParams& params, const Eigen::VectorXd& x);

Eigen::VectorXd setpoint(const SystemParams& params);

/// Draw from the system's initial-state distribution.
Eigen::VectorXd sample_initial_state(const SystemParams& params, Rng& rng);

SystemParams nominal_params(SystemKind kind,
                            const SystemConstants& constants = default_constants());
SystemParams sample_params(SystemKind kind, std::uint64_t seed,
                           const SystemConstants& constants = default_constants());

/// Cartesian grid over the two uncertain coordinates, endpoints included.
/// n must be a perfect square; n = 1 gives the range midpoints.
std::vector<SystemParams> param_grid(SystemKind kind, int n,
                                     const SystemConstants& constants = default_constants());

struct ParamRange {
  double lo, hi, nominal;
};
std::array<ParamRange, 2> uncertain_ranges(SystemKind kind, const SystemConstants& constants);

}  // namespace mako
