#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ifol/fem.hpp"
#include "ifol/mesh.hpp"

namespace ifol {

struct NewtonConfig {
  double tol_residual = 1e-10;  // absolute 2-norm over free dofs
  int max_iters = 10;
  bool line_search = true;      // backtracking halving, max 8 halvings
  bool detach_residual = false;
};

enum class LinearMethod { Lu, Cg };

/// Dense LU with partial pivoting (desk scale); a conjugate-gradient path is
/// available for symmetric positive-definite systems.
Eigen::VectorXd linear_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             LinearMethod method = LinearMethod::Lu);

/// Newton iteration on residual(u) = d(loss)/du = 0 with hard Dirichlet
/// values. For transient problems this solves one implicit-Euler step given
/// u_prev (which also serves as the warm start when u0 is empty).
Eigen::VectorXd newton_solve(const PdeProblem& problem, const Mesh& mesh,
                             const Eigen::VectorXd& c, const DirichletSpec& dirichlet,
                             const Eigen::VectorXd& u0, const NewtonConfig& cfg,
                             const Eigen::VectorXd* u_prev = nullptr,
                             const Eigen::VectorXd* external_load = nullptr,
                             int* iters_out = nullptr);

/// Implicit-Euler reference rollout for transient problems.
std::vector<Eigen::VectorXd> fem_rollout(const PdeProblem& problem, const Mesh& mesh,
                                         const Eigen::VectorXd& c,
                                         const DirichletSpec& dirichlet,
                                         const Eigen::VectorXd& u0, int steps,
                                         const NewtonConfig& cfg);

struct SensitivityResult {
  double objective = 0.0;        // J = integral of the solution over the domain
  Eigen::VectorXd map;           // dJ/dc per node
};

/// Adjoint sensitivity of J = integral(u) dOmega at a converged solution:
/// one transpose solve (dr/du)^T lambda = dJ/du, then
/// map = -lambda^T dr/dc.
SensitivityResult adjoint_sensitivity(const PdeProblem& problem, const Mesh& mesh,
                                      const Eigen::VectorXd& c,
                                      const Eigen::VectorXd& u_solved,
                                      const DirichletSpec& dirichlet,
                                      bool detach_residual = false,
                                      const Eigen::VectorXd* u_prev = nullptr);

struct ErrorMetrics {
  double rel_l2 = 0.0;
  double max_pointwise = 0.0;
};

ErrorMetrics error_metrics(const Eigen::VectorXd& u_pred, const Eigen::VectorXd& u_ref);

/// Pearson correlation coefficient of two equally long vectors.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace ifol
