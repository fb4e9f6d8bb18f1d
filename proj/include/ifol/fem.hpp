#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ifol/mesh.hpp"
#include "ifol/tape.hpp"

namespace ifol {

/// Linear elastic material: a per-node scalar multiplier applied to a base
/// isotropic tensor given by (E, nu). 2D uses plane strain.
struct LinearElasticity {
  Eigen::VectorXd elasticity_field;  // per-node multiplier; control field c overrides it
  double youngs = 1.0;
  double poisson = 0.3;
  bool plane_strain = true;
};

/// Neo-Hookean: W = mu/2 (Ibar1 - 3) + kappa/4 (J^2 - 2 ln J - 1).
/// 2D is plane strain with F33 = 1. A control field scales both moduli.
struct Hyperelastic {
  Eigen::VectorXd mu_field;     // per-node mu(X)
  Eigen::VectorXd kappa_field;  // per-node kappa(X)
};

/// k(x,T) = k0(x) (1 + quartic_coeff T^4); quartic_coeff = 0 gives the
/// plain linear conductivity used by several oracle checks.
struct StationaryDiffusion {
  Eigen::VectorXd k0_field;
  double quartic_coeff = 2.0;
  double source = 0.0;  // constant volumetric Q
};

/// K(x,T) = k0(x) (1 + alpha T), implicit Euler with step dt.
struct TransientThermal {
  Eigen::VectorXd k0_field;
  double alpha = 0.0;
  double rho_cp = 1.0;
  double dt = 1e-2;
  double source = 0.0;
};

/// Scaled Allen-Cahn loss: |grad phi|^2 / 2 + (phi - phi_prev)^2 / (2 dt)
/// + ((phi^2 - 1)^2) / (4 eps^2), integrated with the element rule.
struct AllenCahn {
  double eps = 0.1;
  double dt = 1e-2;
};

using PdeProblem = std::variant<LinearElasticity, Hyperelastic, StationaryDiffusion,
                                TransientThermal, AllenCahn>;

int solution_components(const PdeProblem& problem, int dim);
bool is_transient(const PdeProblem& problem);
const char* problem_name(const PdeProblem& problem);

/// Throws ConfigError when material constants violate physical bounds.
void validate_problem(const PdeProblem& problem, const Mesh& mesh);

/// Per-node control field the problem expects when no sample overrides it.
Eigen::VectorXd default_control(const PdeProblem& problem, const Mesh& mesh);

/// Isotropic stiffness in Voigt form, plane strain in 2D.
Eigen::MatrixXd elasticity_tensor(double youngs, double poisson, int dim);
Eigen::MatrixXd elasticity_tensor_lame(double lambda, double mu, int dim);

// --- boundary conditions -------------------------------------------------

struct DirichletEntry {
  int node = 0;
  int component = 0;
  double value = 0.0;
};

struct DirichletSpec {
  std::vector<DirichletEntry> entries;

  /// Expands (set, component, value) over a named node set.
  void add_set(const Mesh& mesh, const std::string& set_name, int component,
               double value);
  void validate(int n_nodes, int n_components) const;
};

/// Overwrites prescribed entries; everything else is untouched.
Eigen::VectorXd apply_dirichlet(Eigen::VectorXd u, const DirichletSpec& spec,
                                int n_components);
/// Companion gradient mask: zeroes entries at prescribed dofs.
void zero_dirichlet(Eigen::VectorXd& v, const DirichletSpec& spec, int n_components);
/// 1 at free dofs, 0 at prescribed dofs.
Eigen::VectorXd dirichlet_free_mask(const DirichletSpec& spec, int n_dof,
                                    int n_components);

/// Consistent nodal load for a constant flux/traction on a named node set
/// (faces whose nodes all belong to the set).
Eigen::VectorXd boundary_load(const Mesh& mesh, const std::string& set_name,
                              int component, double value, int n_components);

/// Name-level boundary description, expandable on any mesh carrying the same
/// node-set names (the zero-shot evaluation meshes do).
struct BoundaryEntry {
  std::string set;
  int component = 0;
  double value = 0.0;
};

struct BoundarySpec {
  std::vector<BoundaryEntry> dirichlet;
  /// Node set whose Dirichlet values come from the per-sample boundary
  /// vector (one value per solution component); empty when unused.
  std::string sample_dirichlet_set;
  std::vector<BoundaryEntry> neumann;  // constant prescribed flux/traction

  DirichletSpec expand_dirichlet(const Mesh& mesh, int n_components,
                                 const Eigen::VectorXd* sample_bc = nullptr) const;
  /// Sum of the consistent loads of all Neumann entries; empty when none.
  Eigen::VectorXd external_load(const Mesh& mesh, int n_components) const;
};

// --- element and global evaluation ---------------------------------------

struct ElementWork {
  double loss = 0.0;
  Eigen::VectorXd grad;
  std::optional<Eigen::MatrixXd> hess;
};

struct GlobalWork {
  double loss = 0.0;
  Eigen::VectorXd grad;
  std::optional<Eigen::VectorXd> residual;  // == grad when requested
  std::optional<Eigen::SparseMatrix<double>> tangent;
};

struct AssembleOptions {
  bool want_grad = true;
  bool want_tangent = false;
  /// Eq.-(8) semantics for the K(T) diffusion laws: the gradient is the
  /// Galerkin residual with the conductivity held fixed at the current
  /// solution, and the tangent is that residual's exact Jacobian. Off by
  /// default: the Table loss rows are differentiated in full.
  bool detach_residual = false;
};

/// Loss, exact gradient and (optionally) dense tangent of one element.
/// u_e and c_e follow node-major dof ordering; u_prev_e is required for
/// transient problems.
ElementWork element_work(const PdeProblem& problem, const Mesh& mesh, int element,
                         const Eigen::VectorXd& u_e, const Eigen::VectorXd& c_e,
                         const Eigen::VectorXd* u_prev_e, bool want_hess,
                         bool detach_residual = false);

/// d(element residual)/d(element control values), [dofs x nodes].
Eigen::MatrixXd element_residual_control_jacobian(const PdeProblem& problem,
                                                  const Mesh& mesh, int element,
                                                  const Eigen::VectorXd& u_e,
                                                  const Eigen::VectorXd& c_e,
                                                  const Eigen::VectorXd* u_prev_e,
                                                  bool detach_residual = false);

/// Scatter-add of element work. Dirichlet rows of grad/residual are zeroed;
/// tangent rows/columns are condensed to the identity. `external_load`, when
/// given, contributes -u.g to the loss (constant flux / source work).
GlobalWork assemble(const PdeProblem& problem, const Mesh& mesh,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& c,
                    const Eigen::VectorXd* u_prev, const DirichletSpec& dirichlet,
                    const AssembleOptions& opts,
                    const Eigen::VectorXd* external_load = nullptr);

/// Consistent quadrature of the (first component of the) solution field,
/// J = sum_e sum_k w det(J) u(xi_k), and its u-gradient.
double integrate_solution(const PdeProblem& problem, const Mesh& mesh,
                          const Eigen::VectorXd& u, Eigen::VectorXd* dJ_du = nullptr);

// --- tape program ---------------------------------------------------------

/// Ids of the per-sample inputs of a recorded loss program.
struct LossGraph {
  NodeId loss;        // scalar Table-row loss
  NodeId objective;   // scalar integral of the solution (scalar problems only)
  NodeId u_bc;        // nodal field after hard Dirichlet enforcement
};

/// Records the Table loss for every element at once onto `tape`, as a
/// function of the raw nodal field `u_raw` [n_dof x 1], the control field
/// `c` [M x 1], the previous step `u_prev` (transient only) and the
/// prescribed-value vector `bc_values` [n_dof x 1].
LossGraph build_loss_graph(Tape& tape, const Mesh& mesh, const PdeProblem& problem,
                           NodeId u_raw, NodeId c, NodeId u_prev, NodeId bc_values,
                           const Eigen::VectorXd& free_mask, bool detach_residual,
                           const Eigen::VectorXd* external_load = nullptr);

}  // namespace ifol
