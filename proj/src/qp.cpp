#include "mako/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "mako/binary_io.hpp"
#include "mako/error.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr io::Magic kQpMagic{'M', 'A', 'K', 'O', 'Q', 'P', '0', '1'};
constexpr std::uint32_t kQpVersion = 1;

VectorXd clip(const VectorXd& v, const VectorXd& lo, const VectorXd& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

enum class Bound : char { Free, Lower, Upper };

// Primal-dual active-set refinement seeded with a guess; returns nullopt when
// the iteration fails to settle.
std::optional<VectorXd> polish(const QpProblem& qp, std::vector<Bound> active) {
  const Eigen::Index n = qp.size();
  VectorXd x(n);
  for (int sweep = 0; sweep < 2 * n + 5; ++sweep) {
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto s = active[static_cast<std::size_t>(i)];
      if (s == Bound::Free) free.push_back(i);
      else x[i] = (s == Bound::Lower) ? qp.lower[i] : qp.upper[i];
    }
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      MatrixXd pff(nf, nf);
      VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        rhs[a] = -qp.q[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) pff(a, b) = qp.P(free[a], free[b]);
        for (Eigen::Index j = 0; j < n; ++j) {
          if (active[static_cast<std::size_t>(j)] != Bound::Free) rhs[a] -= qp.P(free[a], j) * x[j];
        }
      }
      // small shift plus iterative refinement copes with singular free blocks
      const double delta = 1e-10 * std::max(1.0, pff.diagonal().cwiseAbs().maxCoeff());
      MatrixXd shifted = pff;
      shifted.diagonal().array() += delta;
      const Eigen::LDLT<MatrixXd> ldlt(shifted);
      if (ldlt.info() != Eigen::Success) return std::nullopt;
      VectorXd xf = ldlt.solve(rhs);
      for (int r = 0; r < 5; ++r) xf += ldlt.solve(rhs - pff * xf);
      if (!xf.allFinite()) return std::nullopt;
      for (Eigen::Index a = 0; a < nf; ++a) x[free[a]] = xf[a];
    }

    const VectorXd grad = qp.P * x + qp.q;
    const double slack = 1e-12 * (1.0 + inf_norm(x));
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& s = active[static_cast<std::size_t>(i)];
      Bound next = s;
      if (s == Bound::Free) {
        if (x[i] < qp.lower[i] - slack) next = Bound::Lower;
        else if (x[i] > qp.upper[i] + slack) next = Bound::Upper;
      } else if (qp.lower[i] < qp.upper[i]) {
        if (s == Bound::Lower && grad[i] < 0.0) next = Bound::Free;
        if (s == Bound::Upper && grad[i] > 0.0) next = Bound::Free;
      }
      if (next != s) {
        s = next;
        changed = true;
      }
    }
    if (!changed) return clip(x, qp.lower, qp.upper);
  }
  return std::nullopt;
}

}  // namespace

double QpProblem::objective(const VectorXd& u) const {
  return 0.5 * u.dot(P * u) + q.dot(u) + offset;
}

double projected_gradient_norm(const QpProblem& qp, const VectorXd& u) {
  const VectorXd grad = qp.P * u + qp.q;
  return inf_norm(u - clip(u - grad, qp.lower, qp.upper));
}

QpSolution solve_box_qp(const QpProblem& qp, const std::optional<VectorXd>& warm_start,
                        const QpSettings& settings) {
  const Eigen::Index n = qp.size();
  if (qp.P.rows() != n || qp.P.cols() != n || qp.lower.size() != n || qp.upper.size() != n) {
    throw ArgumentError("solve_box_qp: inconsistent problem shapes");
  }
  if ((qp.lower.array() > qp.upper.array()).any()) {
    throw ArgumentError("solve_box_qp: infeasible box (lower > upper)");
  }
  if (!qp.P.allFinite() || !qp.q.allFinite()) throw NumericError("solve_box_qp: non-finite data");
  if (warm_start && warm_start->size() != n) throw ArgumentError("solve_box_qp: warm start size");

  QpSolution sol;
  if (n == 0) {
    sol.u = VectorXd();
    sol.objective = qp.offset;
    sol.converged = true;
    return sol;
  }

  const double sigma = settings.sigma;
  const double alpha = settings.relaxation;
  double rho = settings.rho;
  auto factor = [&](double r) {
    MatrixXd k = qp.P;
    k.diagonal().array() += sigma + r;
    return Eigen::LLT<MatrixXd>(k);
  };
  Eigen::LLT<MatrixXd> kkt = factor(rho);

  VectorXd x = warm_start ? clip(*warm_start, qp.lower, qp.upper) : clip(VectorXd::Zero(n), qp.lower, qp.upper);
  VectorXd z = x;
  VectorXd y = VectorXd::Zero(n);

  const double tol = settings.tol;
  int iter = 0;
  for (iter = 1; iter <= settings.max_iter; ++iter) {
    const VectorXd xt = kkt.solve(sigma * x - qp.q + rho * z - y);
    const VectorXd z_relaxed = alpha * xt + (1.0 - alpha) * z;
    x = alpha * xt + (1.0 - alpha) * x;
    const VectorXd z_new = clip(z_relaxed + y / rho, qp.lower, qp.upper);
    y += rho * (z_relaxed - z_new);
    z = z_new;

    const VectorXd px = qp.P * x;
    const double prim = inf_norm(x - z);
    const double dual = inf_norm(px + qp.q + y);
    const double prim_scale = std::max(inf_norm(x), inf_norm(z));
    const double dual_scale = std::max({inf_norm(px), inf_norm(y), inf_norm(qp.q)});
    sol.primal_residual = prim;
    sol.dual_residual = dual;
    if (prim <= tol + tol * prim_scale && dual <= tol + tol * dual_scale) {
      sol.converged = true;
      break;
    }
    if (settings.adaptive_rho && iter % settings.adapt_interval == 0) {
      const double ratio = std::sqrt((prim / std::max(prim_scale, 1e-10)) /
                                     std::max(dual / std::max(dual_scale, 1e-10), 1e-30));
      const double proposed = std::clamp(rho * ratio, 1e-6, 1e6);
      if (proposed > 5.0 * rho || proposed < 0.2 * rho) {
        rho = proposed;
        kkt = factor(rho);
      }
    }
  }
  sol.iterations = std::min(iter, settings.max_iter);
  sol.u = z;

  if (settings.polish) {
    std::vector<Bound> guess(static_cast<std::size_t>(n), Bound::Free);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (z[i] - qp.lower[i] < -y[i]) guess[static_cast<std::size_t>(i)] = Bound::Lower;
      else if (qp.upper[i] - z[i] < y[i]) guess[static_cast<std::size_t>(i)] = Bound::Upper;
    }
    if (auto polished = polish(qp, std::move(guess))) {
      if (projected_gradient_norm(qp, *polished) <= projected_gradient_norm(qp, sol.u)) {
        sol.u = *polished;
        sol.polished = true;
        sol.primal_residual = 0.0;
        sol.dual_residual = projected_gradient_norm(qp, sol.u);
        if (sol.dual_residual <= tol) sol.converged = true;
      }
    }
  }
  sol.objective = qp.objective(sol.u);
  return sol;
}

void save_qp(const QpProblem& qp, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  io::write_header(out, kQpMagic, kQpVersion);
  io::write_matrix(out, qp.P);
  io::write_vector(out, qp.q);
  io::write_vector(out, qp.lower);
  io::write_vector(out, qp.upper);
  io::write_f64(out, qp.offset);
}

QpProblem load_qp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  io::read_header(in, kQpMagic, kQpVersion, "QP dump");
  QpProblem qp;
  qp.P = io::read_matrix(in);
  qp.q = io::read_vector(in);
  qp.lower = io::read_vector(in);
  qp.upper = io::read_vector(in);
  qp.offset = io::read_f64(in);
  return qp;
}

}  // namespace mako
