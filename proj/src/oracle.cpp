#include "ifol/oracle.hpp"

#include <cmath>
#include <limits>

#include <Eigen/LU>

namespace ifol {

Eigen::VectorXd linear_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             LinearMethod method) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw ConfigError("linear_solve: dimension mismatch");
  if (method == LinearMethod::Cg) {
    // Plain conjugate gradient for SPD systems; fixed iteration order keeps
    // results reproducible.
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b, p = b;
    double rs = r.squaredNorm();
    const double stop = 1e-24 * std::max(1.0, b.squaredNorm());
    for (int it = 0; it < 4 * b.size() && rs > stop; ++it) {
      Eigen::VectorXd ap = a * p;
      const double pap = p.dot(ap);
      if (!(pap > 0))
        throw NumericalError("linear_solve: CG requires a positive-definite matrix");
      const double alpha = rs / pap;
      x += alpha * p;
      r -= alpha * ap;
      const double rs_new = r.squaredNorm();
      p = r + (rs_new / rs) * p;
      rs = rs_new;
    }
    return x;
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (min_pivot < 1e-14)
    throw NumericalError("linear_solve: singular matrix (pivot " +
                         std::to_string(min_pivot) + ")");
  Eigen::VectorXd x = lu.solve(b);
  const double rel = (a * x - b).norm() / std::max(1e-300, b.norm());
  if (!(rel < 1e-10) && b.norm() > 0)
    throw NumericalError("linear_solve: backsubstitution residual " + std::to_string(rel));
  return x;
}

Eigen::VectorXd newton_solve(const PdeProblem& problem, const Mesh& mesh,
                             const Eigen::VectorXd& c, const DirichletSpec& dirichlet,
                             const Eigen::VectorXd& u0, const NewtonConfig& cfg,
                             const Eigen::VectorXd* u_prev,
                             const Eigen::VectorXd* external_load, int* iters_out) {
  if (!(cfg.tol_residual > 0) || cfg.max_iters < 1)
    throw ConfigError("newton_solve: bad configuration");
  const int ncomp = solution_components(problem, mesh.dim);
  const int ndof = mesh.num_nodes() * ncomp;

  Eigen::VectorXd u = u0.size() == ndof
                          ? u0
                          : (u_prev ? *u_prev : Eigen::VectorXd::Zero(ndof));
  u = apply_dirichlet(std::move(u), dirichlet, ncomp);

  AssembleOptions full;
  full.want_tangent = true;
  full.detach_residual = cfg.detach_residual;
  AssembleOptions gonly;
  gonly.detach_residual = cfg.detach_residual;

  double rn = 0.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    GlobalWork w = assemble(problem, mesh, u, c, u_prev, dirichlet, full, external_load);
    rn = w.residual->norm();
    if (rn < cfg.tol_residual) {
      if (iters_out) *iters_out = it;
      return u;
    }
    Eigen::VectorXd step = linear_solve(Eigen::MatrixXd(*w.tangent), -*w.residual);

    if (!cfg.line_search) {
      u += step;
      continue;
    }
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= 8; ++h) {
      Eigen::VectorXd u_try = u + t * step;
      GlobalWork wt = assemble(problem, mesh, u_try, c, u_prev, dirichlet, gonly,
                               external_load);
      const double rt = wt.residual->norm();
      if (std::isfinite(rt) && rt < rn) {
        u = std::move(u_try);
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted)
      throw NumericalError("newton_solve: line search stalled at residual " +
                           std::to_string(rn));
  }
  // Converged exactly on the last allowed assemble?
  GlobalWork w = assemble(problem, mesh, u, c, u_prev, dirichlet, gonly, external_load);
  rn = w.residual->norm();
  if (rn < cfg.tol_residual) {
    if (iters_out) *iters_out = cfg.max_iters;
    return u;
  }
  throw NumericalError("newton_solve: no convergence after " +
                       std::to_string(cfg.max_iters) + " iterations, residual " +
                       std::to_string(rn));
}

std::vector<Eigen::VectorXd> fem_rollout(const PdeProblem& problem, const Mesh& mesh,
                                         const Eigen::VectorXd& c,
                                         const DirichletSpec& dirichlet,
                                         const Eigen::VectorXd& u0, int steps,
                                         const NewtonConfig& cfg) {
  if (!is_transient(problem)) throw ConfigError("fem_rollout: problem is not transient");
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd prev = u0;
  for (int s = 0; s < steps; ++s) {
    Eigen::VectorXd u =
        newton_solve(problem, mesh, c, dirichlet, prev, cfg, &prev);
    out.push_back(u);
    prev = std::move(u);
  }
  return out;
}

SensitivityResult adjoint_sensitivity(const PdeProblem& problem, const Mesh& mesh,
                                      const Eigen::VectorXd& c,
                                      const Eigen::VectorXd& u_solved,
                                      const DirichletSpec& dirichlet,
                                      bool detach_residual,
                                      const Eigen::VectorXd* u_prev) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int nn = node_count(mesh.elem_type);

  AssembleOptions opts;
  opts.want_tangent = true;
  opts.detach_residual = detach_residual;
  GlobalWork w = assemble(problem, mesh, u_solved, c, u_prev, dirichlet, opts);

  SensitivityResult res;
  Eigen::VectorXd dj_du;
  res.objective = integrate_solution(problem, mesh, u_solved, &dj_du);
  zero_dirichlet(dj_du, dirichlet, ncomp);

  Eigen::MatrixXd at = Eigen::MatrixXd(*w.tangent).transpose();
  Eigen::VectorXd lambda = linear_solve(at, dj_du);

  res.map = Eigen::VectorXd::Zero(mesh.num_nodes());
  Eigen::VectorXd u_e(nn * ncomp), c_e(nn), uprev_e(nn * ncomp);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    for (int a = 0; a < nn; ++a) {
      const int n = mesh.elements(a, e);
      c_e[a] = c[n];
      for (int d = 0; d < ncomp; ++d) {
        u_e[a * ncomp + d] = u_solved[n * ncomp + d];
        if (u_prev) uprev_e[a * ncomp + d] = (*u_prev)[n * ncomp + d];
      }
    }
    Eigen::MatrixXd jc = element_residual_control_jacobian(
        problem, mesh, e, u_e, c_e, u_prev ? &uprev_e : nullptr, detach_residual);
    // Dirichlet rows of the residual are condensed away; their adjoint
    // weight is zero, so mask the gathered lambda accordingly.
    Eigen::VectorXd lam_e(nn * ncomp);
    for (int a = 0; a < nn; ++a)
      for (int d = 0; d < ncomp; ++d)
        lam_e[a * ncomp + d] = lambda[mesh.elements(a, e) * ncomp + d];
    Eigen::VectorXd contrib = jc.transpose() * lam_e;
    for (int a = 0; a < nn; ++a) res.map[mesh.elements(a, e)] -= contrib[a];
  }
  return res;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("pearson: bad inputs");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (!(denom > 0)) return 0.0;
  return (da * db).sum() / denom;
}

ErrorMetrics error_metrics(const Eigen::VectorXd& u_pred, const Eigen::VectorXd& u_ref) {
  if (u_pred.size() != u_ref.size())
    throw ConfigError("error_metrics: length mismatch");
  ErrorMetrics m;
  const double dn = (u_pred - u_ref).norm();
  const double rn = u_ref.norm();
  m.rel_l2 = rn > 0 ? dn / rn : (dn > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  m.max_pointwise = (u_pred - u_ref).cwiseAbs().maxCoeff();
  return m;
}

}  // namespace ifol
