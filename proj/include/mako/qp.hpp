#pragma once

// Box-constrained convex QP:  min 1/2 u'Pu + q'u + offset  s.t.  lower <= u <= upper,
// solved by ADMM operator splitting followed by an active-set polish.

#include <Eigen/Dense>
#include <filesystem>
#include <optional>

namespace mako {

struct QpProblem {
  Eigen::MatrixXd P;  // symmetric positive semidefinite
  Eigen::VectorXd q;
  Eigen::VectorXd lower, upper;
  double offset = 0.0;

  Eigen::Index size() const { return q.size(); }
  double objective(const Eigen::VectorXd& u) const;
};

struct QpSettings {
  double tol = 1e-6;
  int max_iter = 4000;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  bool adaptive_rho = true;
  int adapt_interval = 25;
  bool polish = true;
};

struct QpSolution {
  Eigen::VectorXd u;
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool converged = false;  // false: max_iter hit, best iterate returned
  bool polished = false;
};

/// Throws ArgumentError for lower > upper or inconsistent shapes.
QpSolution solve_box_qp(const QpProblem& qp, const std::optional<Eigen::VectorXd>& warm_start,
                        const QpSettings& settings = {});

/// Infinity norm of u - clip(u - grad, lower, upper); zero exactly at a minimizer.
double projected_gradient_norm(const QpProblem& qp, const Eigen::VectorXd& u);

void save_qp(const QpProblem& qp, const std::filesystem::path& path);
QpProblem load_qp(const std::filesystem::path& path);

}  // namespace mako
