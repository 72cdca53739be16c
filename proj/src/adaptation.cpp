#include "mako/adaptation.hpp"

#include <cmath>
#include <fstream>

#include "mako/error.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kTinySquaredNorm = 1e-12;

VectorXd project_ball(const VectorXd& v, double radius) {
  const double norm = v.norm();
  if (norm <= radius) return v;
  return v * (radius / norm);
}

void check_step_inputs(const AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& u_k,
                       const VectorXd& g_next, const VectorXd& x_next) {
  if (g_k.size() != ops.obs_dim() || g_next.size() != ops.obs_dim() ||
      u_k.size() != ops.input_dim() || x_next.size() != ops.c.rows()) {
    throw ArgumentError("adaptation step: shape mismatch");
  }
}

AdaptRecord apply_update(AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& u_k,
                         const VectorXd& g_next, const VectorXd& x_next, double alpha,
                         double lambda_max, double eps_w, double eps_v) {
  check_step_inputs(ops, g_k, u_k, g_next, x_next);
  VectorXd extended(g_k.size() + u_k.size());
  extended << g_k, u_k;
  const VectorXd g_resid = g_next - ops.psi * extended;
  const VectorXd x_resid = x_next - ops.c * g_next;
  if (!g_resid.allFinite() || !x_resid.allFinite()) {
    throw NumericError("adaptation step: non-finite residual, update rejected");
  }
  AdaptRecord rec;
  rec.lambda = learning_rate(extended, g_next, alpha, lambda_max, &rec.lambda_capped);
  rec.g_resid_norm = g_resid.norm();
  rec.x_resid_norm = x_resid.norm();

  VectorXd g_err = g_resid;
  VectorXd x_err = x_resid;
  if (eps_w > 0.0 || eps_v > 0.0) {
    const auto [w, v] = ideal_noise(g_resid, x_resid, eps_w, eps_v);
    g_err -= w;
    x_err -= v;
  }
  rec.g_update_norm = g_err.norm();
  rec.x_update_norm = x_err.norm();
  ops.psi.noalias() += rec.lambda * g_err * extended.transpose();
  ops.c.noalias() += rec.lambda * x_err * g_next.transpose();
  rec.k = ops.step++;
  return rec;
}

}  // namespace

std::string_view to_string(AdaptMode mode) {
  return mode == AdaptMode::Nominal ? "nominal" : "robust";
}

AdaptMode parse_adapt_mode(std::string_view name) {
  if (name == "nominal") return AdaptMode::Nominal;
  if (name == "robust") return AdaptMode::Robust;
  throw ArgumentError("unknown adaptation mode '" + std::string(name) + "'");
}

AdaptiveOps init_from_meta(const std::vector<KoopmanOps>& ops) {
  if (ops.empty()) throw ArgumentError("init_from_meta: no operators given");
  const auto& first = ops.front();
  first.check_shapes();
  const auto h = first.A.rows();
  const auto m = first.B.cols();
  AdaptiveOps out;
  out.psi = MatrixXd::Zero(h, h + m);
  out.c = MatrixXd::Zero(first.C.rows(), h);
  for (const auto& op : ops) {
    op.check_shapes();
    if (op.A.rows() != h || op.B.cols() != m || op.C.rows() != first.C.rows()) {
      throw ArgumentError("init_from_meta: operators have different shapes");
    }
    out.psi.leftCols(h) += op.A;
    out.psi.rightCols(m) += op.B;
    out.c += op.C;
  }
  const double inv = 1.0 / static_cast<double>(ops.size());
  out.psi *= inv;
  out.c *= inv;
  return out;
}

double learning_rate(const VectorXd& extended, const VectorXd& g_next, double alpha,
                     double lambda_max, bool* capped) {
  if (!(alpha > 0.0 && alpha < 2.0)) throw ArgumentError("learning_rate: alpha must lie in (0, 2)");
  const double xx = extended.squaredNorm();
  const double gg = g_next.squaredNorm();
  const bool tiny = xx < kTinySquaredNorm || gg < kTinySquaredNorm;
  if (capped) *capped = tiny;
  if (tiny) return lambda_max;
  return std::min((2.0 - alpha) / xx, (2.0 - alpha) / gg);
}

AdaptRecord nominal_step(AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& u_k,
                         const VectorXd& g_next, const VectorXd& x_next, double alpha,
                         double lambda_max) {
  return apply_update(ops, g_k, u_k, g_next, x_next, alpha, lambda_max, 0.0, 0.0);
}

std::pair<VectorXd, VectorXd> ideal_noise(const VectorXd& g_resid, const VectorXd& x_resid,
                                          double eps_w, double eps_v) {
  if (eps_w < 0.0 || eps_v < 0.0) throw ArgumentError("ideal_noise: radii must be nonnegative");
  return {project_ball(g_resid, eps_w), project_ball(x_resid, eps_v)};
}

AdaptRecord robust_step(AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& u_k,
                        const VectorXd& g_next, const VectorXd& x_next, const AdaptConfig& config) {
  return apply_update(ops, g_k, u_k, g_next, x_next, config.alpha, config.lambda_max, config.eps_w,
                      config.eps_v);
}

AdaptRecord adapt_step(AdaptiveOps& ops, const VectorXd& g_k, const VectorXd& u_k,
                       const VectorXd& g_next, const VectorXd& x_next, const AdaptConfig& config) {
  if (config.mode == AdaptMode::Robust) return robust_step(ops, g_k, u_k, g_next, x_next, config);
  return nominal_step(ops, g_k, u_k, g_next, x_next, config.alpha, config.lambda_max);
}

double lyapunov_value(const AdaptiveOps& ops, const KoopmanOps& truth) {
  truth.check_shapes();
  const auto h = truth.A.rows();
  if (ops.psi.rows() != h || ops.psi.cols() != h + truth.B.cols() || ops.c.rows() != truth.C.rows() ||
      ops.c.cols() != h) {
    throw ArgumentError("lyapunov_value: shape mismatch");
  }
  MatrixXd psi_true(h, ops.psi.cols());
  psi_true << truth.A, truth.B;
  return (psi_true - ops.psi).squaredNorm() + (truth.C - ops.c).squaredNorm();
}

void write_adapt_trace(const std::vector<AdaptRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "# mako-adapt-trace v1\n";
  out << "k,lambda,g_resid_norm,x_resid_norm,V_if_known\n";
  out.precision(17);
  for (const auto& r : trace) {
    out << r.k << ',' << r.lambda << ',' << r.g_resid_norm << ',' << r.x_resid_norm << ',';
    if (std::isfinite(r.lyapunov)) out << r.lyapunov;
    out << '\n';
  }
}

}  // namespace mako
