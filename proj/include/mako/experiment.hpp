#pragma once

// Experiment harness: configuration presets, closed-loop episodes, parameter
// grid evaluation, synthetic adaptation studies and the run-directory layout.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mako/adaptation.hpp"
#include "mako/mpc.hpp"
#include "mako/synthetic.hpp"
#include "mako/trainer.hpp"

namespace mako {

enum class Scale { Desk, Paper };
std::string_view to_string(Scale scale);
Scale parse_scale(std::string_view name);

struct ExperimentConfig {
  SystemKind system = SystemKind::Cartpole;
  Scale scale = Scale::Desk;
  std::uint64_t seed = 0;
  std::string constants_file;  // empty: compiled-in coefficients

  // data
  int num_tasks = 4;
  int samples_per_task = 5000;
  int trajectory_length = 250;

  // model and training
  int obs_dim = 32;
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::Relu;
  int horizon = 16;
  int batch_size = 128;
  double learning_rate = 1e-4;
  double l2 = 1e-3;
  int epochs = 50;

  // online adaptation
  double alpha = 1.995;
  AdaptMode mode = AdaptMode::Nominal;
  double eps_w = 1e-6, eps_v = 1e-4;
  double lambda_max = 10.0;

  // control
  std::vector<double> q_diag, r_diag, terminal_mask;
  double terminal_weight = 1e4;
  int mpc_horizon = 16;
  bool penalize_first_move = false;
  double qp_tol = 1e-6;
  int qp_max_iter = 4000;
  double qp_relaxation = 1.6;
  int episode_length = 250;
  int grid_size = 9;
  bool include_nominal = true;

  // synthetic adaptation study
  int synthetic_obs_dim = 8, synthetic_input_dim = 2, synthetic_state_dim = 3;
  int synthetic_nominal_steps = 5000, synthetic_robust_steps = 10000;
  double synthetic_alpha = 1.0;
  double synthetic_noise = 1e-3;
};

/// Preset for one system and scale; the full scale carries the published
/// hyperparameters unchanged.
ExperimentConfig default_config(SystemKind system, Scale scale);

std::string config_to_json(const ExperimentConfig& config);
/// Reads "system" and "scale" first, starts from their preset and applies
/// every other field present. Unknown fields throw FormatError.
/// `scale_override`, when non-empty, replaces the file's scale.
ExperimentConfig config_from_json(const std::string& text, std::string_view scale_override = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::string_view scale_override = {});

SystemConstants constants_for(const ExperimentConfig& config);
DataConfig data_config(const ExperimentConfig& config);
TrainConfig train_config(const ExperimentConfig& config);
AdaptConfig adapt_config(const ExperimentConfig& config, AdaptMode mode);
MpcConfig mpc_config(const ExperimentConfig& config, const SystemParams& params);

/// Norm of x - x_s over the dimensions with positive tracking weight, raw units.
double tracking_error(const ExperimentConfig& config, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& x_s);

struct StepRecord {
  int k = 0;
  Eigen::VectorXd state;       // x_k
  Eigen::VectorXd input;       // u_k
  Eigen::VectorXd next_state;  // x_{k+1}
  double tracking_error = 0.0;  // of x_{k+1}
  double stage_cost = 0.0;      // cartpole reporting cost of x_{k+1}; 0 for other systems
  int solver_iterations = 0;
  bool solver_converged = true;
  double solve_seconds = 0.0;
  double lambda = 0.0;
  double g_resid_norm = 0.0, x_resid_norm = 0.0;
};

struct EpisodeRecord {
  std::string label;
  SystemParams params;
  AdaptMode mode = AdaptMode::Nominal;
  std::vector<StepRecord> steps;
  bool terminated_early = false;  // cartpole angle limit tripped
  bool failed = false;            // simulator or solver error
  int failed_step = -1;
  std::string failure;
  int solver_flags = 0;  // steps where the QP hit max_iter
  double cumulative_tracking_error = 0.0;
  double max_abs_angle_deg = 0.0;  // cartpole only

  bool stabilized(SystemKind kind) const;
  double mean_solve_seconds() const;
};

/// measure -> lift -> MPC -> plant step -> adaptation, for `length` steps.
EpisodeRecord run_closed_loop(const MakoModel& model, const SystemParams& params,
                              const ExperimentConfig& config, AdaptMode mode, int length,
                              std::uint64_t episode_seed);

struct GridEntry {
  std::string label;
  SystemParams params;
  AdaptMode mode = AdaptMode::Nominal;
  int steps = 0;
  bool completed = false;
  bool stabilized = false;
  bool failed = false;
  std::string failure;
  double cumulative_tracking_error = 0.0;
  double final_tracking_error = 0.0;
  double final_abs_angle_deg = 0.0;
  double max_abs_angle_deg = 0.0;
  double mean_solve_seconds = 0.0;
};

struct GridReport {
  SystemKind kind = SystemKind::Cartpole;
  AdaptMode mode = AdaptMode::Nominal;
  std::vector<GridEntry> entries;
  double mean_cumulative_error = 0.0;
  double max_cumulative_error = 0.0;
  double mean_solve_seconds = 0.0;
  int stabilized_count = 0;
};

GridEntry summarize(const EpisodeRecord& record, SystemKind kind);

/// One episode per point of param_grid(kind, grid_size), plus the nominal
/// setting when requested. Failures are recorded, never thrown.
GridReport evaluate_param_grid(const MakoModel& model, const ExperimentConfig& config,
                               AdaptMode mode, std::vector<EpisodeRecord>* episodes = nullptr);

void write_episode_csv(const EpisodeRecord& record, const std::filesystem::path& path);
void write_grid_csv(const GridReport& report, const std::filesystem::path& path);
void write_pairwise_csv(const GridReport& nominal, const GridReport& robust,
                        const std::filesystem::path& path);

/// Synthetic nominal and robust studies described by the config.
AdaptStudyConfig synthetic_study_config(const ExperimentConfig& config, AdaptMode mode);

/// Open-loop adaptation on the real plant (nominal parameters, uniform
/// inputs), starting from the meta-average operators.
std::vector<AdaptRecord> plant_adaptation_study(const MakoModel& model,
                                                const ExperimentConfig& config, AdaptMode mode,
                                                int steps);

struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path resolved_config() const { return root / "config.resolved.json"; }
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path traces() const { return root / "traces"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path dataset_file() const { return data() / "meta_dataset.bin"; }
  std::filesystem::path manifest_file() const { return data() / "manifest.json"; }
  std::filesystem::path model_file() const { return model() / "model.bin"; }
  std::filesystem::path curve_file() const { return report() / "train_curve.csv"; }

  void create() const;
};

}  // namespace mako
