#include "mako/mpc.hpp"

#include <chrono>
#include <limits>

#include "mako/error.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void MpcConfig::validate(int n, int m) const {
  if (horizon < 1) throw ArgumentError("MPC horizon must be at least 1");
  if (q_diag.size() != n || r_diag.size() != m) throw ArgumentError("MPC weights have wrong size");
  if ((q_diag.array() < 0.0).any() || (r_diag.array() < 0.0).any()) {
    throw ArgumentError("MPC weights must be nonnegative");
  }
  if (!(terminal_weight >= 0.0)) throw ArgumentError("terminal weight must be nonnegative");
  if (terminal_mask.size() != 0 && terminal_mask.size() != n) {
    throw ArgumentError("terminal mask has wrong size");
  }
}

QpProblem condense_qp(const AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& x_s,
                      const VectorXd& u_prev, const MpcConfig& config) {
  const int h = ops.obs_dim();
  const int m = ops.input_dim();
  const int n = static_cast<int>(ops.c.rows());
  config.validate(n, m);
  if (g_k.size() != h || x_s.size() != n || u_prev.size() != m || ops.c.cols() != h) {
    throw ArgumentError("condense_qp: shape mismatch");
  }
  if (!ops.psi.allFinite() || !ops.c.allFinite() || !g_k.allFinite()) {
    throw NumericError("condense_qp: non-finite operator or lifted state");
  }
  const int T = config.horizon;
  const int N = m * (T + 1);
  const MatrixXd A = ops.a();
  const MatrixXd B = ops.b();
  const VectorXd mask = config.terminal_mask.size() == n ? config.terminal_mask : VectorXd::Ones(n);

  QpProblem qp;
  qp.P = MatrixXd::Zero(N, N);
  qp.q = VectorXd::Zero(N);
  qp.offset = 0.0;

  MatrixXd sens = MatrixXd::Zero(h, N);  // d g_t / d U
  VectorXd free_resp = g_k;              // A^t g_k
  for (int t = 1; t <= T + 1; ++t) {
    sens = A * sens;
    sens.middleCols((t - 1) * m, m) += B;
    free_resp = A * free_resp;
    const MatrixXd gx = ops.c * sens;
    const VectorXd fx = ops.c * free_resp - x_s;
    const VectorXd w = (t <= T) ? VectorXd(config.q_diag) : VectorXd(config.terminal_weight * mask);
    const MatrixXd wgx = w.asDiagonal() * gx;
    qp.P.noalias() += 2.0 * gx.transpose() * wgx;
    qp.q.noalias() += 2.0 * wgx.transpose() * fx;
    qp.offset += fx.dot(w.cwiseProduct(fx));
  }

  const MatrixXd R = config.r_diag.asDiagonal();
  for (int t = 1; t <= T; ++t) {
    qp.P.block(t * m, t * m, m, m) += 2.0 * R;
    qp.P.block((t - 1) * m, (t - 1) * m, m, m) += 2.0 * R;
    qp.P.block(t * m, (t - 1) * m, m, m) -= 2.0 * R;
    qp.P.block((t - 1) * m, t * m, m, m) -= 2.0 * R;
  }
  if (config.penalize_first_move) {
    qp.P.topLeftCorner(m, m) += 2.0 * R;
    qp.q.head(m) -= 2.0 * (R * u_prev);
    qp.offset += u_prev.dot(R * u_prev);
  }
  qp.P = 0.5 * (qp.P + qp.P.transpose()).eval();
  qp.lower = VectorXd::Constant(N, -std::numeric_limits<double>::infinity());
  qp.upper = VectorXd::Constant(N, std::numeric_limits<double>::infinity());
  return qp;
}

VectorXd shift_plan(const VectorXd& plan, int input_dim) {
  if (plan.size() < input_dim || input_dim <= 0) return plan;
  VectorXd out(plan.size());
  const auto rest = plan.size() - input_dim;
  out.head(rest) = plan.tail(rest);
  out.tail(input_dim) = plan.tail(input_dim);
  return out;
}

MpcResult mpc_action(const AdaptiveOps& ops, const MlpParams& theta, const NormStats& norm,
                     const VectorXd& x_raw, const VectorXd& u_prev_raw, const MpcConfig& config,
                     const std::optional<VectorXd>& warm_plan) {
  const auto t0 = std::chrono::steady_clock::now();
  const int m = ops.input_dim();
  if (config.setpoint.size() != x_raw.size() || config.input_lower.size() != m ||
      config.input_upper.size() != m) {
    throw ArgumentError("mpc_action: setpoint or input box has wrong size");
  }
  const VectorXd x = norm.normalize_state(x_raw);
  const VectorXd g = mlp_lift(theta, x);
  const VectorXd x_s = norm.normalize_state(config.setpoint);
  const VectorXd u_prev = norm.normalize_input(u_prev_raw);

  QpProblem qp = condense_qp(ops, g, x_s, u_prev, config);
  const VectorXd lo = norm.normalize_input(config.input_lower);
  const VectorXd hi = norm.normalize_input(config.input_upper);
  for (int t = 0; t <= config.horizon; ++t) {
    qp.lower.segment(t * m, m) = lo;
    qp.upper.segment(t * m, m) = hi;
  }
  std::optional<VectorXd> warm;
  if (warm_plan && warm_plan->size() == qp.size()) warm = warm_plan;

  MpcResult result;
  result.solution = solve_box_qp(qp, warm, config.solver);
  result.plan = result.solution.u;
  const VectorXd u = norm.denormalize_input(result.plan.head(m));
  result.u = u.cwiseMax(config.input_lower).cwiseMin(config.input_upper);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mako
