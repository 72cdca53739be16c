#include "mako/systems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mako/error.hpp"

namespace mako {

using Eigen::VectorXd;
using nlohmann::json;

std::string_view to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Cartpole: return "cartpole";
    case SystemKind::Grn: return "grn";
    case SystemKind::ReactorSeparator: return "process";
  }
  return "unknown";
}

SystemKind parse_system_kind(std::string_view name) {
  if (name == "cartpole") return SystemKind::Cartpole;
  if (name == "grn") return SystemKind::Grn;
  if (name == "process" || name == "reactor_separator") return SystemKind::ReactorSeparator;
  throw ArgumentError("unknown system kind '" + std::string(name) + "'");
}

int state_dim(SystemKind kind) {
  switch (kind) {
    case SystemKind::Cartpole: return 4;
    case SystemKind::Grn: return 6;
    case SystemKind::ReactorSeparator: return 9;
  }
  return 0;
}

int input_dim(SystemKind kind) {
  switch (kind) {
    case SystemKind::Cartpole: return 1;
    case SystemKind::Grn: return 3;
    case SystemKind::ReactorSeparator: return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Constants file

namespace {

json vec_to_json(const VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

VectorXd vec_from_json(const json& j, Eigen::Index expected, const char* name) {
  auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != expected) {
    throw FormatError(std::string("constants field '") + name + "' has wrong length");
  }
  return Eigen::Map<VectorXd>(values.data(), expected);
}

#define MAKO_FIELDS_CARTPOLE(X)                                                 \
  X(cart_mass) X(gravity) X(dt) X(force_limit) X(x_threshold)                   \
  X(theta_threshold_deg) X(init_spread) X(length_lo) X(length_hi)               \
  X(length_nominal) X(mass_lo) X(mass_hi) X(mass_nominal) X(substeps)

#define MAKO_FIELDS_GRN(X)                                                      \
  X(max_transcription) X(leak) X(hill) X(protein_rate) X(gain_2) X(gain_3)      \
  X(input_max) X(dt) X(init_lo) X(init_hi) X(protein1_setpoint) X(k_lo)         \
  X(k_hi) X(k_nominal) X(b1_lo) X(b1_hi) X(b1_nominal) X(substeps)

#define MAKO_FIELDS_PROCESS(X)                                                  \
  X(feed1) X(feed2) X(recycle) X(purge) X(volume1) X(volume2) X(volume3)        \
  X(activation1) X(activation2) X(preexp1) X(preexp2) X(gas_constant)           \
  X(density) X(heat_capacity) X(reaction_heat1) X(reaction_heat2)               \
  X(vaporization_cooling) X(volatility_a) X(volatility_b) X(volatility_c)       \
  X(feed_fraction_a) X(dt) X(substeps) X(t_lo) X(t_hi) X(t_nominal)

template <typename T>
void read_field(const json& section, const char* name, T& out, std::size_t& used) {
  if (auto it = section.find(name); it != section.end()) {
    out = it->get<T>();
    ++used;
  }
}

void check_all_known(const json& section, std::size_t used, const char* name) {
  if (section.size() != used) {
    throw FormatError(std::string("constants section '") + name +
                      "' contains unknown fields");
  }
}

}  // namespace

std::string constants_to_json(const SystemConstants& c) {
  json root;
  json& cp = root["cartpole"];
#define X(f) cp[#f] = c.cartpole.f;
  MAKO_FIELDS_CARTPOLE(X)
#undef X
  json& grn = root["grn"];
#define X(f) grn[#f] = c.grn.f;
  MAKO_FIELDS_GRN(X)
#undef X
  json& pr = root["process"];
#define X(f) pr[#f] = c.process.f;
  MAKO_FIELDS_PROCESS(X)
#undef X
  pr["setpoint"] = vec_to_json(c.process.setpoint);
  pr["input_upper"] = vec_to_json(c.process.input_upper);
  pr["steady_input"] = vec_to_json(c.process.steady_input);
  return root.dump(2);
}

SystemConstants constants_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("constants file is not valid JSON: ") + e.what());
  }
  SystemConstants c = default_constants();
  try {
    for (const auto& [key, _] : root.items()) {
      if (key != "cartpole" && key != "grn" && key != "process") {
        throw FormatError("unknown constants section '" + key + "'");
      }
    }
    if (root.contains("cartpole")) {
      const json& s = root["cartpole"];
      std::size_t used = 0;
#define X(f) read_field(s, #f, c.cartpole.f, used);
      MAKO_FIELDS_CARTPOLE(X)
#undef X
      check_all_known(s, used, "cartpole");
    }
    if (root.contains("grn")) {
      const json& s = root["grn"];
      std::size_t used = 0;
#define X(f) read_field(s, #f, c.grn.f, used);
      MAKO_FIELDS_GRN(X)
#undef X
      check_all_known(s, used, "grn");
    }
    if (root.contains("process")) {
      const json& s = root["process"];
      std::size_t used = 0;
#define X(f) read_field(s, #f, c.process.f, used);
      MAKO_FIELDS_PROCESS(X)
#undef X
      if (s.contains("setpoint")) {
        c.process.setpoint = vec_from_json(s["setpoint"], 9, "setpoint");
        ++used;
      }
      if (s.contains("input_upper")) {
        c.process.input_upper = vec_from_json(s["input_upper"], 3, "input_upper");
        ++used;
      }
      if (s.contains("steady_input")) {
        c.process.steady_input = vec_from_json(s["steady_input"], 3, "steady_input");
        ++used;
      }
      check_all_known(s, used, "process");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad constants field: ") + e.what());
  }
  return c;
}

const SystemConstants& default_constants() {
  static const SystemConstants constants{};
  return constants;
}

SystemConstants load_constants(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open constants file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return constants_from_json(buffer.str());
}

void save_constants(const SystemConstants& constants, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write constants file " + path.string());
  out << constants_to_json(constants) << '\n';
}

// ---------------------------------------------------------------------------
// Integration

VectorXd rk4_integrate(const VectorField& deriv, const VectorXd& x, const VectorXd& u,
                       double dt) {
  if (!(dt > 0.0)) throw ArgumentError("rk4_integrate: dt must be positive");
  auto eval = [&](const VectorXd& at) {
    VectorXd d = deriv(at, u);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d[i])) {
        throw IntegrationError("non-finite derivative in component " + std::to_string(i), i);
      }
    }
    return d;
  };
  const VectorXd k1 = eval(x);
  const VectorXd k2 = eval(x + 0.5 * dt * k1);
  const VectorXd k3 = eval(x + 0.5 * dt * k2);
  const VectorXd k4 = eval(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

VectorXd cartpole_derivative(const CartpoleConstants& c, double length, double pole_mass,
                             const VectorXd& s, double force) {
  const double theta = s[2], theta_dot = s[3];
  const double sin_t = std::sin(theta), cos_t = std::cos(theta);
  const double total_mass = c.cart_mass + pole_mass;
  const double pole_mass_length = pole_mass * length;
  // length is the half-length of the pole (pivot to centre of mass)
  const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc =
      (c.gravity * sin_t - cos_t * temp) /
      (length * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  VectorXd d(4);
  d << s[1], x_acc, theta_dot, theta_acc;
  return d;
}

VectorXd grn_derivative(const GrnConstants& c, double dissociation, double b1,
                        const VectorXd& s, const VectorXd& u) {
  const double gains[3] = {b1, c.gain_2, c.gain_3};
  VectorXd d(6);
  for (int i = 0; i < 3; ++i) {
    const int repressor = 3 + (i + 2) % 3;  // gene i is repressed by protein i-1
    const double p = std::max(s[repressor], 0.0);
    const double repression = 1.0 + std::pow(p / dissociation, c.hill);
    d[i] = -s[i] + c.max_transcription / repression + c.leak + gains[i] * u[i];
    d[3 + i] = -c.protein_rate * (s[3 + i] - s[i]);
  }
  return d;
}

VectorXd process_derivative(const ProcessConstants& c, double t10, double t20,
                            const VectorXd& s, const VectorXd& u) {
  const double xa1 = s[0], xb1 = s[1], t1 = s[2];
  const double xa2 = s[3], xb2 = s[4], t2 = s[5];
  const double xa3 = s[6], xb3 = s[7], t3 = s[8];

  const double xc3 = std::max(1.0 - xa3 - xb3, 0.0);
  const double denom = c.volatility_a * xa3 + c.volatility_b * xb3 + c.volatility_c * xc3;
  const double xar = denom > 0.0 ? c.volatility_a * xa3 / denom : 0.0;
  const double xbr = denom > 0.0 ? c.volatility_b * xb3 / denom : 0.0;

  const double f1 = c.feed1 + c.recycle;
  const double f2 = f1 + c.feed2;
  const double overhead = c.recycle + c.purge;

  auto k1 = [&](double t) { return c.preexp1 * std::exp(-c.activation1 / (c.gas_constant * t)); };
  auto k2 = [&](double t) { return c.preexp2 * std::exp(-c.activation2 / (c.gas_constant * t)); };
  const double ra1 = k1(t1) * xa1, rb1 = k2(t1) * xb1;
  const double ra2 = k1(t2) * xa2, rb2 = k2(t2) * xb2;
  const double rho_cp = c.density * c.heat_capacity;

  VectorXd d(9);
  d[0] = c.feed1 / c.volume1 * (c.feed_fraction_a - xa1) +
         c.recycle / c.volume1 * (xar - xa1) - ra1;
  d[1] = c.feed1 / c.volume1 * (0.0 - xb1) + c.recycle / c.volume1 * (xbr - xb1) + ra1 - rb1;
  d[2] = c.feed1 / c.volume1 * (t10 - t1) + c.recycle / c.volume1 * (t3 - t1) +
         c.reaction_heat1 * ra1 + c.reaction_heat2 * rb1 + u[0] / (rho_cp * c.volume1);
  d[3] = f1 / c.volume2 * (xa1 - xa2) + c.feed2 / c.volume2 * (c.feed_fraction_a - xa2) - ra2;
  d[4] = f1 / c.volume2 * (xb1 - xb2) + c.feed2 / c.volume2 * (0.0 - xb2) + ra2 - rb2;
  d[5] = f1 / c.volume2 * (t1 - t2) + c.feed2 / c.volume2 * (t20 - t2) +
         c.reaction_heat1 * ra2 + c.reaction_heat2 * rb2 + u[1] / (rho_cp * c.volume2);
  d[6] = f2 / c.volume3 * (xa2 - xa3) - overhead / c.volume3 * (xar - xa3);
  d[7] = f2 / c.volume3 * (xb2 - xb3) - overhead / c.volume3 * (xbr - xb3);
  d[8] = f2 / c.volume3 * (t2 - t3) - overhead / c.volume3 * c.vaporization_cooling +
         u[2] / (rho_cp * c.volume3);
  return d;
}

void check_dims(const SystemParams& params, const VectorXd& x, const VectorXd& u) {
  if (x.size() != state_dim(params.kind) || u.size() != input_dim(params.kind)) {
    throw ArgumentError("state/input dimension does not match system " +
                        std::string(to_string(params.kind)));
  }
}

int substeps(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole: return params.constants.cartpole.substeps;
    case SystemKind::Grn: return params.constants.grn.substeps;
    case SystemKind::ReactorSeparator: return params.constants.process.substeps;
  }
  return 1;
}

}  // namespace

VectorXd derivative(const SystemParams& params, const VectorXd& x, const VectorXd& u) {
  check_dims(params, x, u);
  const auto& c = params.constants;
  switch (params.kind) {
    case SystemKind::Cartpole:
      return cartpole_derivative(c.cartpole, params.uncertain[0], params.uncertain[1], x, u[0]);
    case SystemKind::Grn:
      return grn_derivative(c.grn, params.uncertain[0], params.uncertain[1], x, u);
    case SystemKind::ReactorSeparator:
      return process_derivative(c.process, params.uncertain[0], params.uncertain[1], x, u);
  }
  throw ArgumentError("unknown system kind");
}

double control_interval(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole: return params.constants.cartpole.dt;
    case SystemKind::Grn: return params.constants.grn.dt;
    case SystemKind::ReactorSeparator: return params.constants.process.dt;
  }
  return 0.0;
}

VectorXd step(const SystemParams& params, const VectorXd& x, const VectorXd& u) {
  check_dims(params, x, u);
  const int n_sub = std::max(1, substeps(params));
  const double h = control_interval(params) / n_sub;
  const VectorField field = [&params](const VectorXd& s, const VectorXd& in) {
    return derivative(params, s, in);
  };
  VectorXd next = x;
  for (int i = 0; i < n_sub; ++i) next = rk4_integrate(field, next, u, h);

  switch (params.kind) {
    case SystemKind::Cartpole: break;
    case SystemKind::Grn: next = next.cwiseMax(0.0); break;
    case SystemKind::ReactorSeparator:
      for (int idx : {0, 1, 3, 4, 6, 7}) next[idx] = std::clamp(next[idx], 0.0, 1.0);
      break;
  }
  if (next.cwiseAbs().maxCoeff() > 1e9) {
    throw DivergenceError("state blow-up in " + std::string(to_string(params.kind)));
  }
  return next;
}

VectorXd input_lower(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole:
      return VectorXd::Constant(1, -params.constants.cartpole.force_limit);
    case SystemKind::Grn: return VectorXd::Zero(3);
    case SystemKind::ReactorSeparator: return VectorXd::Zero(3);
  }
  return {};
}

VectorXd input_upper(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole:
      return VectorXd::Constant(1, params.constants.cartpole.force_limit);
    case SystemKind::Grn: return VectorXd::Constant(3, params.constants.grn.input_max);
    case SystemKind::ReactorSeparator: return params.constants.process.input_upper;
  }
  return {};
}

VectorXd clamp_input(const SystemParams& params, const VectorXd& u) {
  if (u.size() != input_dim(params.kind)) throw ArgumentError("clamp_input: wrong input size");
  return u.cwiseMax(input_lower(params)).cwiseMin(input_upper(params));
}

double stage_cost(const SystemParams& params, const VectorXd& x) {
  if (params.kind != SystemKind::Cartpole) {
    throw ArgumentError("stage_cost is defined for the cartpole only");
  }
  const auto& c = params.constants.cartpole;
  const double theta_thr = c.theta_threshold_deg * std::numbers::pi / 180.0;
  const double px = x[0] / c.x_threshold;
  const double pt = x[2] / theta_thr;
  return 0.1 * px * px + pt * pt;
}

bool pole_fallen(const SystemParams& params, const VectorXd& x) {
  if (params.kind != SystemKind::Cartpole) return false;
  const double theta_thr =
      params.constants.cartpole.theta_threshold_deg * std::numbers::pi / 180.0;
  return std::abs(x[2]) > theta_thr;
}

VectorXd setpoint(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole: return VectorXd::Zero(4);
    case SystemKind::Grn: {
      // only p1 is regulated; the other entries carry the same level and are
      // unweighted by the controller
      return VectorXd::Constant(6, params.constants.grn.protein1_setpoint);
    }
    case SystemKind::ReactorSeparator: return params.constants.process.setpoint;
  }
  return {};
}

VectorXd sample_initial_state(const SystemParams& params, Rng& rng) {
  const int n = state_dim(params.kind);
  VectorXd x(n);
  switch (params.kind) {
    case SystemKind::Cartpole: {
      const double w = params.constants.cartpole.init_spread;
      for (int i = 0; i < n; ++i) x[i] = uniform(rng, -w, w);
      break;
    }
    case SystemKind::Grn: {
      const auto& c = params.constants.grn;
      for (int i = 0; i < n; ++i) x[i] = uniform(rng, c.init_lo, c.init_hi);
      break;
    }
    case SystemKind::ReactorSeparator: {
      const VectorXd& xs = params.constants.process.setpoint;
      for (int i = 0; i < n; ++i) x[i] = uniform(rng, 0.8 * xs[i], 1.2 * xs[i]);
      for (int idx : {0, 1, 3, 4, 6, 7}) x[idx] = std::clamp(x[idx], 0.0, 1.0);
      break;
    }
  }
  return x;
}

std::array<ParamRange, 2> uncertain_ranges(SystemKind kind, const SystemConstants& c) {
  switch (kind) {
    case SystemKind::Cartpole:
      return {ParamRange{c.cartpole.length_lo, c.cartpole.length_hi, c.cartpole.length_nominal},
              ParamRange{c.cartpole.mass_lo, c.cartpole.mass_hi, c.cartpole.mass_nominal}};
    case SystemKind::Grn:
      return {ParamRange{c.grn.k_lo, c.grn.k_hi, c.grn.k_nominal},
              ParamRange{c.grn.b1_lo, c.grn.b1_hi, c.grn.b1_nominal}};
    case SystemKind::ReactorSeparator:
      return {ParamRange{c.process.t_lo, c.process.t_hi, c.process.t_nominal},
              ParamRange{c.process.t_lo, c.process.t_hi, c.process.t_nominal}};
  }
  throw ArgumentError("unknown system kind");
}

SystemParams nominal_params(SystemKind kind, const SystemConstants& constants) {
  const auto ranges = uncertain_ranges(kind, constants);
  SystemParams p{kind, Eigen::Vector2d(ranges[0].nominal, ranges[1].nominal), constants};
  return p;
}

SystemParams sample_params(SystemKind kind, std::uint64_t seed, const SystemConstants& constants) {
  const auto ranges = uncertain_ranges(kind, constants);
  Rng rng(seed);
  SystemParams p{kind, Eigen::Vector2d::Zero(), constants};
  for (int i = 0; i < 2; ++i) p.uncertain[i] = uniform(rng, ranges[i].lo, ranges[i].hi);
  return p;
}

std::vector<SystemParams> param_grid(SystemKind kind, int n, const SystemConstants& constants) {
  if (n < 1) throw ArgumentError("param_grid: n must be positive");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ArgumentError("param_grid: n must be a perfect square");
  const auto ranges = uncertain_ranges(kind, constants);
  auto axis = [&](const ParamRange& r) {
    std::vector<double> values(side);
    if (side == 1) {
      values[0] = 0.5 * (r.lo + r.hi);
    } else {
      for (int i = 0; i < side; ++i) {
        values[i] = r.lo + (r.hi - r.lo) * static_cast<double>(i) / (side - 1);
      }
    }
    return values;
  };
  const auto first = axis(ranges[0]);
  const auto second = axis(ranges[1]);
  std::vector<SystemParams> grid;
  grid.reserve(n);
  for (double a : first) {
    for (double b : second) grid.push_back(SystemParams{kind, Eigen::Vector2d(a, b), constants});
  }
  return grid;
}

}  // namespace mako
