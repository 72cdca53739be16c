#pragma once

// Online refinement of the lifted operators from streaming data: nominal
// gradient updates, the dead-zone robust variant and Lyapunov bookkeeping.

#include <Eigen/Dense>
#include <filesystem>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

#include "mako/trainer.hpp"

namespace mako {

struct AdaptiveOps {
  Eigen::MatrixXd psi;  // h x (h + m), the stacked [A B]
  Eigen::MatrixXd c;    // n x h
  long step = 0;

  int obs_dim() const { return static_cast<int>(psi.rows()); }
  int input_dim() const { return static_cast<int>(psi.cols() - psi.rows()); }
  Eigen::MatrixXd a() const { return psi.leftCols(psi.rows()); }
  Eigen::MatrixXd b() const { return psi.rightCols(psi.cols() - psi.rows()); }
  KoopmanOps as_koopman() const { return {a(), b(), c, -1}; }
};

enum class AdaptMode { Nominal, Robust };
std::string_view to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(std::string_view name);

struct AdaptConfig {
  double alpha = 1.0;  // in (0, 2)
  AdaptMode mode = AdaptMode::Nominal;
  double eps_w = 0.0, eps_v = 0.0;
  double lambda_max = 10.0;
};

struct AdaptRecord {
  long k = 0;
  double lambda = 0.0;
  bool lambda_capped = false;
  double g_resid_norm = 0.0;  // ||g_next - Psi X||
  double x_resid_norm = 0.0;  // ||x_next - C g_next||
  double g_update_norm = 0.0;  // residual actually applied (after the noise projection)
  double x_update_norm = 0.0;
  double lyapunov = std::numeric_limits<double>::quiet_NaN();  // after the update, if known
};

/// Elementwise mean of the per-task operators.
AdaptiveOps init_from_meta(const std::vector<KoopmanOps>& ops);

/// min((2 - alpha) / |X|^2, (2 - alpha) / |g_next|^2); returns lambda_max with
/// `capped` set when either squared norm is below 1e-12.
double learning_rate(const Eigen::VectorXd& extended, const Eigen::VectorXd& g_next, double alpha,
                     double lambda_max = 10.0, bool* capped = nullptr);

AdaptRecord nominal_step(AdaptiveOps& ops, const Eigen::VectorXd& g_k, const Eigen::VectorXd& u_k,
                         const Eigen::VectorXd& g_next, const Eigen::VectorXd& x_next,
                         double alpha, double lambda_max = 10.0);

/// Projections of the residuals onto the balls of radius eps_w and eps_v.
std::pair<Eigen::VectorXd, Eigen::VectorXd> ideal_noise(const Eigen::VectorXd& g_resid,
                                                        const Eigen::VectorXd& x_resid,
                                                        double eps_w, double eps_v);

AdaptRecord robust_step(AdaptiveOps& ops, const Eigen::VectorXd& g_k, const Eigen::VectorXd& u_k,
                        const Eigen::VectorXd& g_next, const Eigen::VectorXd& x_next,
                        const AdaptConfig& config);

/// Dispatches on config.mode.
AdaptRecord adapt_step(AdaptiveOps& ops, const Eigen::VectorXd& g_k, const Eigen::VectorXd& u_k,
                       const Eigen::VectorXd& g_next, const Eigen::VectorXd& x_next,
                       const AdaptConfig& config);

/// ||Psi_true - Psi_hat||_F^2 + ||C_true - C_hat||_F^2.
double lyapunov_value(const AdaptiveOps& ops, const KoopmanOps& truth);

void write_adapt_trace(const std::vector<AdaptRecord>& trace, const std::filesystem::path& path);

}  // namespace mako
