#pragma once

// Receding-horizon tracking controller on the lifted linear model. The
// horizon-T problem is condensed into a dense box QP over u_0 .. u_T.

#include <Eigen/Dense>
#include <optional>

#include "mako/adaptation.hpp"
#include "mako/mlp.hpp"
#include "mako/qp.hpp"

namespace mako {

struct MpcConfig {
  int horizon = 16;
  Eigen::VectorXd q_diag;          // n, >= 0
  Eigen::VectorXd r_diag;          // m, > 0
  double terminal_weight = 1e4;
  Eigen::VectorXd terminal_mask;   // n, weights of the terminal penalty (empty: all ones)
  bool penalize_first_move = false;  // adds ||u_0 - u_prev||_R^2
  QpSettings solver;
  // raw-unit data used by mpc_action
  Eigen::VectorXd setpoint;
  Eigen::VectorXd input_lower, input_upper;

  void validate(int n, int m) const;
};

/// Objective over the stacked inputs U = (u_0, ..., u_T):
///   sum_{t=1..T} |C g_t - x_s|_Q^2 + sum_{t=1..T} |u_t - u_{t-1}|_R^2
///   + terminal_weight * |C g_{T+1} - x_s|_mask^2,
/// with g_0 = g_k and g_{t+1} = A g_t + B u_t. Box bounds are left unset.
QpProblem condense_qp(const AdaptiveOps& ops, const Eigen::VectorXd& g_k,
                      const Eigen::VectorXd& x_s, const Eigen::VectorXd& u_prev,
                      const MpcConfig& config);

struct MpcResult {
  Eigen::VectorXd u;         // raw, clamped first input
  Eigen::VectorXd plan;      // normalized stacked solution, for warm starts
  QpSolution solution;
  double seconds = 0.0;
};

/// Warm start: previous plan shifted by one input, last input repeated.
Eigen::VectorXd shift_plan(const Eigen::VectorXd& plan, int input_dim);

/// Normalize, lift, condense, solve, denormalize and clamp. `warm_plan` is the
/// previous normalized plan (already shifted) or empty.
MpcResult mpc_action(const AdaptiveOps& ops, const MlpParams& theta, const NormStats& norm,
                     const Eigen::VectorXd& x_raw, const Eigen::VectorXd& u_prev_raw,
                     const MpcConfig& config, const std::optional<Eigen::VectorXd>& warm_plan = {});

}  // namespace mako
