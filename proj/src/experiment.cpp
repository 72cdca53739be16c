#include "mako/experiment.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mako/error.hpp"
#include "mako/parallel.hpp"

namespace mako {

using Eigen::VectorXd;
using nlohmann::json;

std::string_view to_string(Scale scale) { return scale == Scale::Desk ? "desk" : "paper"; }

Scale parse_scale(std::string_view name) {
  if (name == "desk") return Scale::Desk;
  if (name == "paper") return Scale::Paper;
  throw ArgumentError("unknown scale '" + std::string(name) + "' (expected desk or paper)");
}

ExperimentConfig default_config(SystemKind system, Scale scale) {
  ExperimentConfig c;
  c.system = system;
  c.scale = scale;
  // shared training hyperparameters
  c.samples_per_task = 50000;
  c.batch_size = 128;
  c.learning_rate = 1e-4;
  c.horizon = 16;
  c.hidden = {128, 128};
  c.activation = Activation::Relu;
  c.l2 = 1e-3;
  c.epochs = 400;

  switch (system) {
    case SystemKind::Cartpole:
      c.obs_dim = 128;
      c.trajectory_length = 250;
      c.eps_w = 1e-6;
      c.eps_v = 1e-4;
      c.num_tasks = 10;
      c.alpha = 1.995;
      c.q_diag = {0.01, 0.0, 1.0, 0.2};
      c.r_diag = {0.01};
      c.terminal_mask = {1.0, 1.0, 1.0, 1.0};
      break;
    case SystemKind::Grn:
      c.obs_dim = 128;
      c.trajectory_length = 400;
      c.eps_w = 1e-6;
      c.eps_v = 1e-4;
      c.num_tasks = 10;
      c.alpha = 1.1;
      c.q_diag = {0.0, 0.0, 0.0, 1.0, 0.0, 0.0};
      c.r_diag = {0.01, 0.01, 0.01};
      c.terminal_mask = {0.0, 0.0, 0.0, 1.0, 0.0, 0.0};
      break;
    case SystemKind::ReactorSeparator:
      c.obs_dim = 256;
      c.trajectory_length = 500;
      c.eps_w = 1e-8;
      c.eps_v = 1e-8;
      c.num_tasks = 20;
      c.alpha = 1.98;
      c.q_diag = {1, 1, 0, 1, 1, 0, 1, 1, 0};
      c.r_diag = {1e-3, 1e-3, 1e-3};
      c.terminal_mask = {1, 1, 0, 1, 1, 0, 1, 1, 0};
      break;
  }
  c.episode_length = c.trajectory_length;

  if (scale == Scale::Desk) {
    c.num_tasks = 4;
    c.samples_per_task = 5000;
    c.obs_dim = 32;
    c.epochs = 50;
    c.learning_rate = 1e-3;
    // desk samples must stay a whole number of trajectories
    c.samples_per_task = (c.samples_per_task / c.trajectory_length) * c.trajectory_length;
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON mirror

#define MAKO_CONFIG_FIELDS(X)                                                       \
  X(seed) X(constants_file) X(num_tasks) X(samples_per_task) X(trajectory_length)   \
  X(obs_dim) X(hidden) X(horizon) X(batch_size) X(learning_rate) X(l2) X(epochs)    \
  X(alpha) X(eps_w) X(eps_v) X(lambda_max) X(q_diag) X(r_diag) X(terminal_mask)     \
  X(terminal_weight) X(mpc_horizon) X(penalize_first_move) X(qp_tol)               \
  X(qp_max_iter) X(qp_relaxation) X(episode_length) X(grid_size) X(include_nominal) \
  X(synthetic_obs_dim) X(synthetic_input_dim) X(synthetic_state_dim)               \
  X(synthetic_nominal_steps) X(synthetic_robust_steps) X(synthetic_alpha)          \
  X(synthetic_noise)

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["system"] = std::string(to_string(c.system));
  j["scale"] = std::string(to_string(c.scale));
  j["activation"] = c.activation == Activation::Relu ? "relu" : "tanh";
  j["mode"] = std::string(to_string(c.mode));
#define MAKO_PUT(name) j[#name] = c.name;
  MAKO_CONFIG_FIELDS(MAKO_PUT)
#undef MAKO_PUT
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text, std::string_view scale_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  if (!j.contains("system")) throw FormatError("config lacks the 'system' field");
  const SystemKind system = parse_system_kind(j["system"].get<std::string>());
  Scale scale = Scale::Desk;
  if (!scale_override.empty()) scale = parse_scale(scale_override);
  else if (j.contains("scale")) scale = parse_scale(j["scale"].get<std::string>());

  ExperimentConfig c = default_config(system, scale);
  static const std::set<std::string> known = {
      "system", "scale", "activation", "mode",
#define MAKO_NAME(name) #name,
      MAKO_CONFIG_FIELDS(MAKO_NAME)
#undef MAKO_NAME
  };
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw FormatError("unknown config field '" + key + "'");
  }
  try {
#define MAKO_GET(name) \
  if (j.contains(#name)) c.name = j[#name].get<decltype(c.name)>();
    MAKO_CONFIG_FIELDS(MAKO_GET)
#undef MAKO_GET
    if (j.contains("activation")) {
      const auto a = j["activation"].get<std::string>();
      if (a == "relu") c.activation = Activation::Relu;
      else if (a == "tanh") c.activation = Activation::Tanh;
      else throw FormatError("unknown activation '" + a + "'");
    }
    if (j.contains("mode")) c.mode = parse_adapt_mode(j["mode"].get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("config field has the wrong type: ") + e.what());
  }

  const auto n = static_cast<std::size_t>(state_dim(system));
  const auto m = static_cast<std::size_t>(input_dim(system));
  if (c.q_diag.size() != n || c.terminal_mask.size() != n || c.r_diag.size() != m) {
    throw FormatError("config weight vectors do not match the system dimensions");
  }
  if (!(c.alpha > 0.0 && c.alpha < 2.0)) throw FormatError("config alpha must lie in (0, 2)");
  if (c.trajectory_length < 1 || c.samples_per_task % c.trajectory_length != 0) {
    throw FormatError("samples_per_task must be a multiple of trajectory_length");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::string_view scale_override) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), scale_override);
}

#undef MAKO_CONFIG_FIELDS

// ---------------------------------------------------------------------------
// Derived configurations

SystemConstants constants_for(const ExperimentConfig& config) {
  if (config.constants_file.empty()) return default_constants();
  return load_constants(config.constants_file);
}

DataConfig data_config(const ExperimentConfig& config) {
  DataConfig d;
  d.num_tasks = config.num_tasks;
  d.samples_per_task = config.samples_per_task;
  d.episode_len = config.trajectory_length;
  d.seed = derive_seed(config.seed, 11);
  d.constants = constants_for(config);
  return d;
}

TrainConfig train_config(const ExperimentConfig& config) {
  TrainConfig t;
  t.obs_dim = config.obs_dim;
  t.hidden = config.hidden;
  t.activation = config.activation;
  t.horizon = config.horizon;
  t.batch_size = config.batch_size;
  t.learning_rate = config.learning_rate;
  t.l2 = config.l2;
  t.epochs = config.epochs;
  t.seed = derive_seed(config.seed, 12);
  return t;
}

AdaptConfig adapt_config(const ExperimentConfig& config, AdaptMode mode) {
  AdaptConfig a;
  a.alpha = config.alpha;
  a.mode = mode;
  a.eps_w = config.eps_w;
  a.eps_v = config.eps_v;
  a.lambda_max = config.lambda_max;
  return a;
}

MpcConfig mpc_config(const ExperimentConfig& config, const SystemParams& params) {
  auto vec = [](const std::vector<double>& v) {
    return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  MpcConfig m;
  m.horizon = config.mpc_horizon;
  m.q_diag = vec(config.q_diag);
  m.r_diag = vec(config.r_diag);
  m.terminal_mask = vec(config.terminal_mask);
  m.terminal_weight = config.terminal_weight;
  m.penalize_first_move = config.penalize_first_move;
  m.solver.tol = config.qp_tol;
  m.solver.max_iter = config.qp_max_iter;
  m.solver.relaxation = config.qp_relaxation;
  m.setpoint = setpoint(params);
  m.input_lower = input_lower(params);
  m.input_upper = input_upper(params);
  return m;
}

double tracking_error(const ExperimentConfig& config, const VectorXd& x, const VectorXd& x_s) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (config.q_diag[static_cast<std::size_t>(i)] > 0.0) s += (x[i] - x_s[i]) * (x[i] - x_s[i]);
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Closed loop

namespace {

double angle_deg(const VectorXd& x) { return std::abs(x[2]) * 180.0 / std::numbers::pi; }

VectorXd initial_input(const SystemParams& params) {
  switch (params.kind) {
    case SystemKind::Cartpole: return VectorXd::Zero(1);
    case SystemKind::Grn: return input_lower(params);
    case SystemKind::ReactorSeparator: return params.constants.process.steady_input;
  }
  return {};
}

std::string param_label(const SystemParams& p) {
  std::ostringstream os;
  os.precision(6);
  os << p.uncertain[0] << '/' << p.uncertain[1];
  return os.str();
}

}  // namespace

bool EpisodeRecord::stabilized(SystemKind kind) const {
  if (failed || terminated_early || steps.empty()) return false;
  if (kind == SystemKind::Cartpole) return angle_deg(steps.back().next_state) < 2.0;
  const double first = steps.front().tracking_error;
  return steps.back().tracking_error <= 0.1 * first || steps.back().tracking_error < 1e-3;
}

double EpisodeRecord::mean_solve_seconds() const {
  if (steps.empty()) return 0.0;
  double s = 0.0;
  for (const auto& st : steps) s += st.solve_seconds;
  return s / static_cast<double>(steps.size());
}

EpisodeRecord run_closed_loop(const MakoModel& model, const SystemParams& params,
                              const ExperimentConfig& config, AdaptMode mode, int length,
                              std::uint64_t episode_seed) {
  EpisodeRecord rec;
  rec.params = params;
  rec.mode = mode;
  rec.label = param_label(params);
  if (length <= 0) return rec;

  const MpcConfig mpc = mpc_config(config, params);
  const AdaptConfig adapt = adapt_config(config, mode);
  AdaptiveOps ops = init_from_meta(model.ops);
  Rng rng(episode_seed);
  VectorXd x = sample_initial_state(params, rng);
  VectorXd u_prev = initial_input(params);
  std::optional<VectorXd> warm;
  const VectorXd x_s = setpoint(params);

  for (int k = 0; k < length; ++k) {
    StepRecord st;
    st.k = k;
    st.state = x;
    try {
      const MpcResult action = mpc_action(ops, model.theta, model.norm, x, u_prev, mpc, warm);
      st.input = action.u;
      st.solver_iterations = action.solution.iterations;
      st.solver_converged = action.solution.converged;
      st.solve_seconds = action.seconds;
      if (!action.solution.converged) ++rec.solver_flags;

      const VectorXd x_next = step(params, x, action.u);
      st.next_state = x_next;
      st.tracking_error = tracking_error(config, x_next, x_s);
      if (params.kind == SystemKind::Cartpole) {
        st.stage_cost = stage_cost(params, x_next);
        rec.max_abs_angle_deg = std::max(rec.max_abs_angle_deg, angle_deg(x_next));
      }

      const VectorXd g_k = mlp_lift(model.theta, model.norm.normalize_state(x));
      const VectorXd xn_next = model.norm.normalize_state(x_next);
      const VectorXd g_next = mlp_lift(model.theta, xn_next);
      const VectorXd un = model.norm.normalize_input(action.u);
      const AdaptRecord ar = adapt_step(ops, g_k, un, g_next, xn_next, adapt);
      st.lambda = ar.lambda;
      st.g_resid_norm = ar.g_resid_norm;
      st.x_resid_norm = ar.x_resid_norm;

      rec.cumulative_tracking_error += st.tracking_error;
      rec.steps.push_back(st);
      warm = shift_plan(action.plan, ops.input_dim());
      u_prev = action.u;
      x = x_next;
      if (params.kind == SystemKind::Cartpole && pole_fallen(params, x)) {
        rec.terminated_early = true;
        break;
      }
    } catch (const Error& e) {
      rec.failed = true;
      rec.failed_step = k;
      rec.failure = e.what();
      break;
    }
  }
  return rec;
}

GridEntry summarize(const EpisodeRecord& record, SystemKind kind) {
  GridEntry e;
  e.label = record.label;
  e.params = record.params;
  e.mode = record.mode;
  e.steps = static_cast<int>(record.steps.size());
  e.failed = record.failed;
  e.failure = record.failure;
  e.completed = !record.failed && !record.terminated_early;
  e.stabilized = record.stabilized(kind);
  e.cumulative_tracking_error = record.cumulative_tracking_error;
  e.final_tracking_error = record.steps.empty() ? 0.0 : record.steps.back().tracking_error;
  if (kind == SystemKind::Cartpole && !record.steps.empty()) {
    e.final_abs_angle_deg = angle_deg(record.steps.back().next_state);
  }
  e.max_abs_angle_deg = record.max_abs_angle_deg;
  e.mean_solve_seconds = record.mean_solve_seconds();
  return e;
}

GridReport evaluate_param_grid(const MakoModel& model, const ExperimentConfig& config,
                               AdaptMode mode, std::vector<EpisodeRecord>* episodes) {
  const SystemConstants constants = constants_for(config);
  std::vector<SystemParams> settings = param_grid(config.system, config.grid_size, constants);
  if (config.include_nominal) settings.push_back(nominal_params(config.system, constants));

  std::vector<EpisodeRecord> records(settings.size());
  parallel_for(settings.size(), [&](std::size_t i) {
    // the initial state depends on the grid index only, so both modes start alike
    records[i] = run_closed_loop(model, settings[i], config, mode, config.episode_length,
                                 derive_seed(config.seed, 7000 + i));
  });
  if (config.include_nominal) records.back().label = "nominal " + records.back().label;

  GridReport report;
  report.kind = config.system;
  report.mode = mode;
  double total_time = 0.0;
  for (const auto& r : records) {
    GridEntry e = summarize(r, config.system);
    report.mean_cumulative_error += e.cumulative_tracking_error;
    report.max_cumulative_error = std::max(report.max_cumulative_error, e.cumulative_tracking_error);
    total_time += e.mean_solve_seconds;
    if (e.stabilized) ++report.stabilized_count;
    report.entries.push_back(std::move(e));
  }
  if (!report.entries.empty()) {
    report.mean_cumulative_error /= static_cast<double>(report.entries.size());
    report.mean_solve_seconds = total_time / static_cast<double>(report.entries.size());
  }
  if (episodes) *episodes = std::move(records);
  return report;
}

// ---------------------------------------------------------------------------
// CSV output

void write_episode_csv(const EpisodeRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.precision(17);
  out << "# mako-episode-trace v1\n";
  const auto n = record.steps.empty() ? 0 : record.steps.front().state.size();
  const auto m = record.steps.empty() ? 0 : record.steps.front().input.size();
  out << "k";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << i;
  for (Eigen::Index i = 0; i < m; ++i) out << ",u" << i;
  out << ",tracking_error,stage_cost,solver_iterations,solver_converged,solve_seconds,lambda,"
         "g_resid_norm,x_resid_norm\n";
  for (const auto& s : record.steps) {
    out << s.k;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << s.state[i];
    for (Eigen::Index i = 0; i < m; ++i) out << ',' << s.input[i];
    out << ',' << s.tracking_error << ',' << s.stage_cost << ',' << s.solver_iterations << ','
        << (s.solver_converged ? 1 : 0) << ',' << s.solve_seconds << ',' << s.lambda << ','
        << s.g_resid_norm << ',' << s.x_resid_norm << '\n';
  }
  out << "# terminated_early=" << (record.terminated_early ? 1 : 0)
      << " failed=" << (record.failed ? 1 : 0) << " failed_step=" << record.failed_step
      << " cumulative_tracking_error=" << record.cumulative_tracking_error << '\n';
}

void write_grid_csv(const GridReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.precision(17);
  out << "# mako-grid-summary v1\n";
  out << "index,label,param0,param1,mode,steps,completed,stabilized,failed,"
         "cumulative_tracking_error,final_tracking_error,final_abs_angle_deg,max_abs_angle_deg,"
         "mean_solve_seconds\n";
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    out << i << ",\"" << e.label << "\"," << e.params.uncertain[0] << ',' << e.params.uncertain[1]
        << ',' << to_string(e.mode) << ',' << e.steps << ',' << e.completed << ',' << e.stabilized
        << ',' << e.failed << ',' << e.cumulative_tracking_error << ',' << e.final_tracking_error
        << ',' << e.final_abs_angle_deg << ',' << e.max_abs_angle_deg << ','
        << e.mean_solve_seconds << '\n';
  }
  out << "# mean_cumulative_error=" << report.mean_cumulative_error
      << " max_cumulative_error=" << report.max_cumulative_error
      << " mean_solve_seconds=" << report.mean_solve_seconds
      << " stabilized=" << report.stabilized_count << '/' << report.entries.size() << '\n';
}

void write_pairwise_csv(const GridReport& nominal, const GridReport& robust,
                        const std::filesystem::path& path) {
  if (nominal.entries.size() != robust.entries.size()) {
    throw ArgumentError("pairwise comparison needs grids of equal size");
  }
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.precision(17);
  out << "# mako-grid-pairwise v1\n";
  out << "index,label,nominal_cumulative_error,robust_cumulative_error,ratio,nominal_stabilized,"
         "robust_stabilized\n";
  for (std::size_t i = 0; i < nominal.entries.size(); ++i) {
    const auto& a = nominal.entries[i];
    const auto& b = robust.entries[i];
    const double ratio = a.cumulative_tracking_error > 0.0
                             ? b.cumulative_tracking_error / a.cumulative_tracking_error
                             : std::numeric_limits<double>::quiet_NaN();
    out << i << ",\"" << a.label << "\"," << a.cumulative_tracking_error << ','
        << b.cumulative_tracking_error << ',' << ratio << ',' << a.stabilized << ','
        << b.stabilized << '\n';
  }
}

// ---------------------------------------------------------------------------
// Adaptation studies

AdaptStudyConfig synthetic_study_config(const ExperimentConfig& config, AdaptMode mode) {
  AdaptStudyConfig s;
  s.obs_dim = config.synthetic_obs_dim;
  s.input_dim = config.synthetic_input_dim;
  s.state_dim = config.synthetic_state_dim;
  s.adapt.alpha = config.synthetic_alpha;
  s.adapt.mode = mode;
  s.adapt.lambda_max = config.lambda_max;
  s.seed = derive_seed(config.seed, 13);
  if (mode == AdaptMode::Robust) {
    s.steps = config.synthetic_robust_steps;
    s.noise_w = s.noise_v = config.synthetic_noise;
    s.adapt.eps_w = s.adapt.eps_v = config.synthetic_noise;
  } else {
    s.steps = config.synthetic_nominal_steps;
  }
  return s;
}

std::vector<AdaptRecord> plant_adaptation_study(const MakoModel& model,
                                                const ExperimentConfig& config, AdaptMode mode,
                                                int steps) {
  const SystemParams params = nominal_params(config.system, constants_for(config));
  const AdaptConfig adapt = adapt_config(config, mode);
  AdaptiveOps ops = init_from_meta(model.ops);
  Rng rng(derive_seed(config.seed, 14));
  VectorXd x = sample_initial_state(params, rng);
  const VectorXd lo = input_lower(params), hi = input_upper(params);
  std::vector<AdaptRecord> trace;
  for (int k = 0; k < steps; ++k) {
    VectorXd u(lo.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = uniform(rng, lo[j], hi[j]);
    VectorXd x_next = step(params, x, u);
    if (params.kind == SystemKind::Cartpole && pole_fallen(params, x_next)) {
      x_next = sample_initial_state(params, rng);
      x = x_next;
      continue;
    }
    const VectorXd xn = model.norm.normalize_state(x);
    const VectorXd xn_next = model.norm.normalize_state(x_next);
    trace.push_back(adapt_step(ops, mlp_lift(model.theta, xn), model.norm.normalize_input(u),
                               mlp_lift(model.theta, xn_next), xn_next, adapt));
    x = x_next;
  }
  return trace;
}

void RunLayout::create() const {
  for (const auto& dir : {root, data(), model(), traces(), report()}) {
    std::filesystem::create_directories(dir);
  }
}

}  // namespace mako
