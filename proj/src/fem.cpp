#include "ifol/fem.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fem_kernels.hpp"

namespace ifol {

int solution_components(const PdeProblem& problem, int dim) {
  return std::visit(
      [dim](const auto& pb) {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, LinearElasticity> ||
                      std::is_same_v<P, Hyperelastic>)
          return dim;
        else
          return 1;
      },
      problem);
}

bool is_transient(const PdeProblem& problem) {
  return std::holds_alternative<TransientThermal>(problem) ||
         std::holds_alternative<AllenCahn>(problem);
}

const char* problem_name(const PdeProblem& problem) {
  return std::visit(
      [](const auto& pb) {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, LinearElasticity>) return "linear_elasticity";
        else if constexpr (std::is_same_v<P, Hyperelastic>) return "hyperelastic";
        else if constexpr (std::is_same_v<P, StationaryDiffusion>) return "stationary_diffusion";
        else if constexpr (std::is_same_v<P, TransientThermal>) return "transient_thermal";
        else return "allen_cahn";
      },
      problem);
}

namespace {

void require_positive_field(const Eigen::VectorXd& f, const char* what) {
  for (int i = 0; i < f.size(); ++i) {
    if (!std::isfinite(f[i]))
      throw ConfigError(std::string("problem: non-finite entry in ") + what);
    if (f[i] <= 0.0)
      throw ConfigError(std::string("problem: ") + what + " must be strictly positive");
  }
}

}  // namespace

void validate_problem(const PdeProblem& problem, const Mesh& mesh) {
  const int m = mesh.num_nodes();
  std::visit(
      [&](const auto& pb) {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, LinearElasticity>) {
          if (pb.poisson <= -1.0 || pb.poisson >= 0.5)
            throw ConfigError("problem: poisson ratio must lie in (-1, 1/2)");
          if (pb.youngs <= 0.0) throw ConfigError("problem: youngs modulus must be positive");
          if (pb.elasticity_field.size() != 0 && pb.elasticity_field.size() != m)
            throw ConfigError("problem: elasticity_field length != node count");
        } else if constexpr (std::is_same_v<P, Hyperelastic>) {
          if (pb.mu_field.size() != m || pb.kappa_field.size() != m)
            throw ConfigError("problem: mu/kappa field length != node count");
          require_positive_field(pb.mu_field, "mu_field");
          require_positive_field(pb.kappa_field, "kappa_field");
        } else if constexpr (std::is_same_v<P, StationaryDiffusion>) {
          if (pb.k0_field.size() != 0 && pb.k0_field.size() != m)
            throw ConfigError("problem: k0_field length != node count");
          if (pb.k0_field.size() == m) require_positive_field(pb.k0_field, "k0_field");
          if (pb.quartic_coeff < 0.0)
            throw ConfigError("problem: quartic_coeff must be >= 0");
        } else if constexpr (std::is_same_v<P, TransientThermal>) {
          if (pb.k0_field.size() != 0 && pb.k0_field.size() != m)
            throw ConfigError("problem: k0_field length != node count");
          if (pb.k0_field.size() == m) require_positive_field(pb.k0_field, "k0_field");
          if (pb.rho_cp <= 0.0) throw ConfigError("problem: rho_cp must be positive");
          if (pb.dt <= 0.0) throw ConfigError("problem: dt must be positive");
        } else {
          if (pb.eps <= 0.0) throw ConfigError("problem: eps must be positive");
          if (pb.dt <= 0.0) throw ConfigError("problem: dt must be positive");
        }
      },
      problem);
}

Eigen::VectorXd default_control(const PdeProblem& problem, const Mesh& mesh) {
  const int m = mesh.num_nodes();
  return std::visit(
      [m](const auto& pb) -> Eigen::VectorXd {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, LinearElasticity>) {
          if (pb.elasticity_field.size() > 0) return pb.elasticity_field;
          return Eigen::VectorXd::Ones(m);
        } else if constexpr (std::is_same_v<P, StationaryDiffusion> ||
                             std::is_same_v<P, TransientThermal>) {
          if (pb.k0_field.size() > 0) return pb.k0_field;
          return Eigen::VectorXd::Ones(m);
        } else {
          return Eigen::VectorXd::Ones(m);
        }
      },
      problem);
}

Eigen::MatrixXd elasticity_tensor_lame(double lambda, double mu, int dim) {
  if (dim == 2) {
    Eigen::MatrixXd c(3, 3);
    c << lambda + 2 * mu, lambda, 0,
        lambda, lambda + 2 * mu, 0,
        0, 0, mu;
    return c;
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) c(i, j) = lambda;
  for (int i = 0; i < 3; ++i) c(i, i) += 2 * mu;
  for (int i = 3; i < 6; ++i) c(i, i) = mu;
  return c;
}

Eigen::MatrixXd elasticity_tensor(double youngs, double poisson, int dim) {
  const double lambda = youngs * poisson / ((1 + poisson) * (1 - 2 * poisson));
  const double mu = youngs / (2 * (1 + poisson));
  return elasticity_tensor_lame(lambda, mu, dim);
}

// --- Dirichlet -------------------------------------------------------------

void DirichletSpec::add_set(const Mesh& mesh, const std::string& set_name,
                            int component, double value) {
  for (int node : mesh.node_set(set_name)) entries.push_back({node, component, value});
}

void DirichletSpec::validate(int n_nodes, int n_components) const {
  std::set<std::pair<int, int>> seen;
  for (const auto& e : entries) {
    if (e.node < 0 || e.node >= n_nodes)
      throw ConfigError("dirichlet: node index out of range");
    if (e.component < 0 || e.component >= n_components)
      throw ConfigError("dirichlet: component out of range");
    if (!seen.insert({e.node, e.component}).second)
      throw ConfigError("dirichlet: duplicate (node, component) pair");
  }
}

Eigen::VectorXd apply_dirichlet(Eigen::VectorXd u, const DirichletSpec& spec,
                                int n_components) {
  for (const auto& e : spec.entries) u[e.node * n_components + e.component] = e.value;
  return u;
}

void zero_dirichlet(Eigen::VectorXd& v, const DirichletSpec& spec, int n_components) {
  for (const auto& e : spec.entries) v[e.node * n_components + e.component] = 0.0;
}

Eigen::VectorXd dirichlet_free_mask(const DirichletSpec& spec, int n_dof,
                                    int n_components) {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(n_dof);
  for (const auto& e : spec.entries) mask[e.node * n_components + e.component] = 0.0;
  return mask;
}

namespace {

// Faces (edges in 2D) of each element type, for boundary integration.
const std::vector<std::vector<int>>& element_faces(ElementType t) {
  static const std::vector<std::vector<int>> quad{{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  static const std::vector<std::vector<int>> tri{{0, 1}, {1, 2}, {2, 0}};
  static const std::vector<std::vector<int>> tet{{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  switch (t) {
    case ElementType::Quad4: return quad;
    case ElementType::Tri3: return tri;
    case ElementType::Tet4: return tet;
  }
  throw ConfigError("unknown element type");
}

double face_measure(const Mesh& mesh, const std::vector<int>& face_nodes) {
  if (face_nodes.size() == 2) {
    return (mesh.coords.col(face_nodes[1]) - mesh.coords.col(face_nodes[0])).norm();
  }
  Eigen::Vector3d a = mesh.coords.col(face_nodes[1]) - mesh.coords.col(face_nodes[0]);
  Eigen::Vector3d b = mesh.coords.col(face_nodes[2]) - mesh.coords.col(face_nodes[0]);
  return 0.5 * a.cross(b).norm();
}

}  // namespace

Eigen::VectorXd boundary_load(const Mesh& mesh, const std::string& set_name,
                              int component, double value, int n_components) {
  const std::vector<int>& set = mesh.node_set(set_name);
  std::vector<char> in_set(mesh.num_nodes(), 0);
  for (int n : set) in_set[n] = 1;

  Eigen::VectorXd load = Eigen::VectorXd::Zero(mesh.num_nodes() * n_components);
  const auto& faces = element_faces(mesh.elem_type);
  std::set<std::vector<int>> visited;  // global face keys, avoids double counting
  for (int e = 0; e < mesh.num_elements(); ++e) {
    for (const auto& face : faces) {
      std::vector<int> gl(face.size());
      bool all_in = true;
      for (size_t a = 0; a < face.size(); ++a) {
        gl[a] = mesh.elements(face[a], e);
        all_in = all_in && in_set[gl[a]];
      }
      if (!all_in) continue;
      std::vector<int> key = gl;
      std::sort(key.begin(), key.end());
      if (!visited.insert(key).second) continue;
      // Consistent load of a constant flux with linear shape functions:
      // each face node carries measure / n_face_nodes.
      const double share = value * face_measure(mesh, gl) / static_cast<double>(gl.size());
      for (int n : gl) load[n * n_components + component] += share;
    }
  }
  return load;
}

DirichletSpec BoundarySpec::expand_dirichlet(const Mesh& mesh, int n_components,
                                             const Eigen::VectorXd* sample_bc) const {
  DirichletSpec spec;
  for (const auto& e : dirichlet)
    for (int node : mesh.node_set(e.set))
      spec.entries.push_back({node, e.component, e.value});
  if (!sample_dirichlet_set.empty()) {
    for (int comp = 0; comp < n_components; ++comp) {
      const double v = sample_bc && comp < sample_bc->size() ? (*sample_bc)[comp] : 0.0;
      for (int node : mesh.node_set(sample_dirichlet_set))
        spec.entries.push_back({node, comp, v});
    }
  }
  spec.validate(mesh.num_nodes(), n_components);
  return spec;
}

Eigen::VectorXd BoundarySpec::external_load(const Mesh& mesh, int n_components) const {
  if (neumann.empty()) return {};
  Eigen::VectorXd g = Eigen::VectorXd::Zero(mesh.num_nodes() * n_components);
  for (const auto& e : neumann)
    g += boundary_load(mesh, e.set, e.component, e.value, n_components);
  return g;
}

// --- element work ------------------------------------------------------------

namespace {

struct ElemBases {
  Eigen::VectorXd base1, base2;  // hyperelastic mu/kappa per node
  double lambda = 0.0, mu = 0.0; // linear elasticity Lame constants
};

ElemBases gather_bases(const PdeProblem& problem, const Mesh& mesh, int e) {
  ElemBases b;
  const int nn = node_count(mesh.elem_type);
  if (const auto* he = std::get_if<Hyperelastic>(&problem)) {
    b.base1.resize(nn);
    b.base2.resize(nn);
    for (int a = 0; a < nn; ++a) {
      b.base1[a] = he->mu_field[mesh.elements(a, e)];
      b.base2[a] = he->kappa_field[mesh.elements(a, e)];
    }
  } else if (const auto* le = std::get_if<LinearElasticity>(&problem)) {
    b.lambda = le->youngs * le->poisson / ((1 + le->poisson) * (1 - 2 * le->poisson));
    b.mu = le->youngs / (2 * (1 + le->poisson));
  }
  return b;
}

template <class T>
T eval_kernel(const PdeProblem& problem, const kernels::ElemGeom& g,
              const ElemBases& b, const std::vector<T>& u, const std::vector<T>& c,
              const Eigen::VectorXd* uprev, bool detach) {
  return kernels::element_loss<T>(problem, g, u.data(), c.data(),
                                  uprev ? uprev->data() : nullptr,
                                  b.base1.size() ? b.base1.data() : nullptr,
                                  b.base2.size() ? b.base2.data() : nullptr,
                                  b.lambda, b.mu, detach);
}

}  // namespace

ElementWork element_work(const PdeProblem& problem, const Mesh& mesh, int element,
                         const Eigen::VectorXd& u_e, const Eigen::VectorXd& c_e,
                         const Eigen::VectorXd* u_prev_e, bool want_hess,
                         bool detach_residual) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int nn = node_count(mesh.elem_type);
  const int ndof = nn * ncomp;
  if (u_e.size() != ndof) throw ConfigError("element_work: u_e has wrong length");
  if (c_e.size() != nn) throw ConfigError("element_work: c_e has wrong length");
  if (is_transient(problem) && !u_prev_e)
    throw ConfigError("element_work: transient problem requires u_prev_e");
  for (int i = 0; i < c_e.size(); ++i)
    if (!std::isfinite(c_e[i]))
      throw NumericalError("element_work: non-finite material value");

  const kernels::ElemGeom g = kernels::elem_geom(mesh, element);
  const ElemBases bases = gather_bases(problem, mesh, element);

  ElementWork w;
  w.grad.resize(ndof);

  // Value + gradient in one forward-mode pass per dof.
  std::vector<Dual1> ud(ndof), cd(nn);
  for (int i = 0; i < nn; ++i) cd[i] = Dual1(c_e[i]);
  for (int j = 0; j < ndof; ++j) {
    for (int i = 0; i < ndof; ++i) ud[i] = Dual1(u_e[i], i == j ? 1.0 : 0.0);
    Dual1 r = eval_kernel(problem, g, bases, ud, cd, u_prev_e, detach_residual);
    w.grad[j] = r.d;
    if (j == 0) w.loss = r.v;
  }
  if (ndof == 0) w.loss = 0.0;

  if (want_hess) {
    Eigen::MatrixXd h(ndof, ndof);
    std::vector<Dual2> ud2(ndof), cd2(nn);
    for (int i = 0; i < nn; ++i) cd2[i] = Dual2(c_e[i]);
    // The full-mode Hessian is symmetric; the detached residual's Jacobian
    // is not, so sweep every pair in that case.
    for (int i = 0; i < ndof; ++i) {
      for (int j = detach_residual ? 0 : i; j < ndof; ++j) {
        for (int k = 0; k < ndof; ++k)
          ud2[k] = Dual2(Dual1(u_e[k], k == i ? 1.0 : 0.0),
                         Dual1(k == j ? 1.0 : 0.0, 0.0));
        Dual2 r = eval_kernel(problem, g, bases, ud2, cd2, u_prev_e, detach_residual);
        h(i, j) = r.d.d;
        if (!detach_residual) h(j, i) = r.d.d;
      }
    }
    if (detach_residual) h.transposeInPlace();  // h(i,j) was d r_j / d u_i
    w.hess = std::move(h);
  }
  return w;
}

Eigen::MatrixXd element_residual_control_jacobian(const PdeProblem& problem,
                                                  const Mesh& mesh, int element,
                                                  const Eigen::VectorXd& u_e,
                                                  const Eigen::VectorXd& c_e,
                                                  const Eigen::VectorXd* u_prev_e,
                                                  bool detach_residual) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int nn = node_count(mesh.elem_type);
  const int ndof = nn * ncomp;
  const kernels::ElemGeom g = kernels::elem_geom(mesh, element);
  const ElemBases bases = gather_bases(problem, mesh, element);

  Eigen::MatrixXd jc(ndof, nn);  // d r_j / d c_i
  std::vector<Dual2> ud(ndof), cd(nn);
  for (int i = 0; i < nn; ++i) {
    for (int j = 0; j < ndof; ++j) {
      for (int k = 0; k < ndof; ++k)
        ud[k] = Dual2(Dual1(u_e[k], 0.0), Dual1(k == j ? 1.0 : 0.0, 0.0));
      for (int k = 0; k < nn; ++k)
        cd[k] = Dual2(Dual1(c_e[k], k == i ? 1.0 : 0.0), Dual1(0.0, 0.0));
      Dual2 r = eval_kernel(problem, g, bases, ud, cd, u_prev_e, detach_residual);
      jc(j, i) = r.d.d;
    }
  }
  return jc;
}

GlobalWork assemble(const PdeProblem& problem, const Mesh& mesh,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& c,
                    const Eigen::VectorXd* u_prev, const DirichletSpec& dirichlet,
                    const AssembleOptions& opts, const Eigen::VectorXd* external_load) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int nn = node_count(mesh.elem_type);
  const int ndof = mesh.num_nodes() * ncomp;
  if (u.size() != ndof) throw ConfigError("assemble: u has wrong length");
  if (c.size() != mesh.num_nodes()) throw ConfigError("assemble: c has wrong length");
  if (is_transient(problem)) {
    if (!u_prev) throw ConfigError("assemble: transient problem requires u_prev");
    if (u_prev->size() != ndof) throw ConfigError("assemble: u_prev has wrong length");
  }
  dirichlet.validate(mesh.num_nodes(), ncomp);

  GlobalWork out;
  out.loss = 0.0;
  out.grad = Eigen::VectorXd::Zero(ndof);
  std::vector<Eigen::Triplet<double>> trips;
  const bool want_h = opts.want_tangent;
  if (want_h) trips.reserve(static_cast<size_t>(mesh.num_elements()) * nn * ncomp * nn * ncomp);

  std::vector<char> prescribed(ndof, 0);
  for (const auto& e : dirichlet.entries) prescribed[e.node * ncomp + e.component] = 1;

  Eigen::VectorXd u_e(nn * ncomp), c_e(nn), uprev_e(nn * ncomp);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    for (int a = 0; a < nn; ++a) {
      const int n = mesh.elements(a, e);
      c_e[a] = c[n];
      for (int d = 0; d < ncomp; ++d) {
        u_e[a * ncomp + d] = u[n * ncomp + d];
        if (u_prev) uprev_e[a * ncomp + d] = (*u_prev)[n * ncomp + d];
      }
    }
    ElementWork w =
        element_work(problem, mesh, e, u_e, c_e, u_prev ? &uprev_e : nullptr,
                     want_h, opts.detach_residual);
    out.loss += w.loss;
    if (opts.want_grad || want_h) {
      for (int a = 0; a < nn; ++a)
        for (int d = 0; d < ncomp; ++d)
          out.grad[mesh.elements(a, e) * ncomp + d] += w.grad[a * ncomp + d];
    }
    if (want_h) {
      for (int a = 0; a < nn * ncomp; ++a) {
        const int gi = mesh.elements(a / ncomp, e) * ncomp + a % ncomp;
        if (prescribed[gi]) continue;
        for (int b = 0; b < nn * ncomp; ++b) {
          const int gj = mesh.elements(b / ncomp, e) * ncomp + b % ncomp;
          if (prescribed[gj]) continue;
          trips.emplace_back(gi, gj, (*w.hess)(a, b));
        }
      }
    }
  }

  if (external_load) {
    if (external_load->size() != ndof)
      throw ConfigError("assemble: external load has wrong length");
    out.loss -= u.dot(*external_load);
    out.grad -= *external_load;
  }

  zero_dirichlet(out.grad, dirichlet, ncomp);
  if (opts.want_grad || want_h) out.residual = out.grad;
  if (want_h) {
    for (int i = 0; i < ndof; ++i)
      if (prescribed[i]) trips.emplace_back(i, i, 1.0);
    Eigen::SparseMatrix<double> k(ndof, ndof);
    k.setFromTriplets(trips.begin(), trips.end());
    out.tangent = std::move(k);
  }
  return out;
}

double integrate_solution(const PdeProblem& problem, const Mesh& mesh,
                          const Eigen::VectorXd& u, Eigen::VectorXd* dJ_du) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int nn = node_count(mesh.elem_type);
  double j = 0.0;
  if (dJ_du) *dJ_du = Eigen::VectorXd::Zero(u.size());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const kernels::ElemGeom g = kernels::elem_geom(mesh, e);
    for (int k = 0; k < g.nqp; ++k) {
      double uq = 0.0;
      for (int a = 0; a < nn; ++a) uq += g.N[k][a] * u[mesh.elements(a, e) * ncomp];
      j += g.wdet[k] * uq;
      if (dJ_du)
        for (int a = 0; a < nn; ++a)
          (*dJ_du)[mesh.elements(a, e) * ncomp] += g.wdet[k] * g.N[k][a];
    }
  }
  return j;
}

// --- tape program ---------------------------------------------------------

namespace {

struct QpConstants {
  std::shared_ptr<const Mat> n_row;                 // 1 x nodes
  std::vector<std::shared_ptr<const Mat>> gradn;    // per axis, nodes x n_el
  std::shared_ptr<const Mat> wdet;                  // 1 x n_el
  std::shared_ptr<const Mat> half_wdet;             // 1 x n_el
};

std::vector<QpConstants> qp_constants(const Mesh& mesh) {
  const int nn = node_count(mesh.elem_type);
  const int nel = mesh.num_elements();
  const int nqp = static_cast<int>(quadrature(mesh.elem_type).weights.size());
  std::vector<QpConstants> out(nqp);
  std::vector<Mat> gx(nqp), wd(nqp);
  std::vector<std::vector<Mat>> gn(nqp);
  for (int k = 0; k < nqp; ++k) {
    gn[k].assign(mesh.dim, Mat(nn, nel));
    wd[k].resize(1, nel);
  }
  for (int e = 0; e < nel; ++e) {
    const kernels::ElemGeom g = kernels::elem_geom(mesh, e);
    for (int k = 0; k < nqp; ++k) {
      wd[k](0, e) = g.wdet[k];
      for (int d = 0; d < mesh.dim; ++d)
        for (int a = 0; a < nn; ++a) gn[k][d](a, e) = g.gradN[k](d, a);
    }
  }
  const QuadratureRule& rule = quadrature(mesh.elem_type);
  for (int k = 0; k < nqp; ++k) {
    ShapeEval se = shape_eval(mesh.elem_type, rule.points.col(k));
    Mat nrow(1, nn);
    for (int a = 0; a < nn; ++a) nrow(0, a) = se.N[a];
    out[k].n_row = std::make_shared<const Mat>(std::move(nrow));
    for (int d = 0; d < mesh.dim; ++d)
      out[k].gradn.push_back(std::make_shared<const Mat>(std::move(gn[k][d])));
    out[k].wdet = std::make_shared<const Mat>(wd[k]);
    out[k].half_wdet = std::make_shared<const Mat>(Mat(0.5 * wd[k]));
  }
  return out;
}

std::shared_ptr<const IdxMat> connectivity_idx(const Mesh& mesh, int ncomp, int comp) {
  const int nn = node_count(mesh.elem_type);
  IdxMat idx(nn, mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e)
    for (int a = 0; a < nn; ++a) idx(a, e) = mesh.elements(a, e) * ncomp + comp;
  return std::make_shared<const IdxMat>(std::move(idx));
}

NodeId add_all(Tape& t, const std::vector<NodeId>& terms) {
  NodeId acc = terms.front();
  for (size_t i = 1; i < terms.size(); ++i) acc = t.add(acc, terms[i]);
  return acc;
}

}  // namespace

LossGraph build_loss_graph(Tape& tape, const Mesh& mesh, const PdeProblem& problem,
                           NodeId u_raw, NodeId c, NodeId u_prev, NodeId bc_values,
                           const Eigen::VectorXd& free_mask, bool detach_residual,
                           const Eigen::VectorXd* external_load) {
  const int ncomp = solution_components(problem, mesh.dim);
  const int ndof = mesh.num_nodes() * ncomp;
  if (tape.rows(u_raw) != ndof || tape.cols(u_raw) != 1)
    throw Error("build_loss_graph: u_raw must be n_dof x 1");
  if (free_mask.size() != ndof)
    throw Error("build_loss_graph: free_mask must be n_dof long");

  // Hard Dirichlet enforcement: u = u_raw .* mask + bc .* (1 - mask).
  Mat mask(ndof, 1), inv_mask(ndof, 1);
  for (int i = 0; i < ndof; ++i) {
    mask(i, 0) = free_mask[i];
    inv_mask(i, 0) = 1.0 - free_mask[i];
  }
  NodeId u_bc = tape.add(tape.mul_const(u_raw, std::make_shared<const Mat>(mask)),
                         tape.mul_const(bc_values, std::make_shared<const Mat>(inv_mask)));

  const std::vector<QpConstants> qps = qp_constants(mesh);
  const int dim = mesh.dim;

  std::vector<NodeId> comp_gather(ncomp);
  for (int d = 0; d < ncomp; ++d)
    comp_gather[d] = tape.gather(u_bc, connectivity_idx(mesh, ncomp, d));
  NodeId c_e = tape.gather(c, connectivity_idx(mesh, 1, 0));
  NodeId uprev_e;
  if (is_transient(problem)) {
    if (!u_prev.valid()) throw Error("build_loss_graph: transient problem needs u_prev");
    uprev_e = tape.gather(u_prev, connectivity_idx(mesh, 1, 0));
  }

  std::vector<NodeId> terms;
  NodeId objective;
  std::vector<NodeId> j_terms;

  auto grad_sq = [&](const QpConstants& qp, NodeId field_e) {
    // |grad u|^2 at the quadrature point, [1 x n_el].
    NodeId acc;
    for (int d = 0; d < dim; ++d) {
      NodeId gd = tape.row_sum(tape.mul_const(field_e, qp.gradn[d]));
      NodeId g2 = tape.square(gd);
      acc = d == 0 ? g2 : tape.add(acc, g2);
    }
    return acc;
  };
  auto interp_const = [&](const QpConstants& qp, NodeId field_e) {
    return tape.matmul(tape.constant(qp.n_row), field_e);
  };

  std::visit(
      [&](const auto& pb) {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, StationaryDiffusion> ||
                      std::is_same_v<P, TransientThermal>) {
          for (const auto& qp : qps) {
            NodeId tq = interp_const(qp, comp_gather[0]);
            NodeId k0q = interp_const(qp, c_e);
            NodeId td = detach_residual ? tape.stop_grad(tq) : tq;
            NodeId kq;
            double source = 0.0;
            if constexpr (std::is_same_v<P, StationaryDiffusion>) {
              kq = tape.mul(k0q, tape.affine(tape.pow_int(td, 4), pb.quartic_coeff, 1.0));
              source = pb.source;
            } else {
              kq = tape.mul(k0q, tape.affine(td, pb.alpha, 1.0));
              source = pb.source;
            }
            terms.push_back(tape.sum(
                tape.mul_const(tape.mul(kq, grad_sq(qp, comp_gather[0])), qp.half_wdet)));
            if constexpr (std::is_same_v<P, TransientThermal>) {
              NodeId tprevq = interp_const(qp, uprev_e);
              NodeId jump = tape.sub(tq, tprevq);
              terms.push_back(tape.affine(
                  tape.sum(tape.mul_const(tape.square(jump), qp.half_wdet)),
                  pb.rho_cp / pb.dt, 0.0));
            }
            if (source != 0.0)
              terms.push_back(tape.affine(
                  tape.sum(tape.mul_const(tq, qp.wdet)), -source, 0.0));
            j_terms.push_back(tape.sum(tape.mul_const(tq, qp.wdet)));
          }
        } else if constexpr (std::is_same_v<P, AllenCahn>) {
          const double inv_eps2 = 1.0 / (pb.eps * pb.eps);
          for (const auto& qp : qps) {
            NodeId pq = interp_const(qp, comp_gather[0]);
            terms.push_back(
                tape.sum(tape.mul_const(grad_sq(qp, comp_gather[0]), qp.half_wdet)));
            NodeId jump = tape.sub(pq, interp_const(qp, uprev_e));
            terms.push_back(tape.affine(
                tape.sum(tape.mul_const(tape.square(jump), qp.half_wdet)), 1.0 / pb.dt,
                0.0));
            NodeId well = tape.affine(tape.square(pq), 1.0, -1.0);
            terms.push_back(tape.affine(
                tape.sum(tape.mul_const(tape.square(well), qp.wdet)), 0.25 * inv_eps2,
                0.0));
            j_terms.push_back(tape.sum(tape.mul_const(pq, qp.wdet)));
          }
        } else if constexpr (std::is_same_v<P, LinearElasticity>) {
          const double lambda =
              pb.youngs * pb.poisson / ((1 + pb.poisson) * (1 - 2 * pb.poisson));
          const double mu = pb.youngs / (2 * (1 + pb.poisson));
          for (const auto& qp : qps) {
            NodeId mult = interp_const(qp, c_e);
            std::vector<NodeId> du(dim * dim);  // du[a*dim+b] = d u_a / d x_b
            for (int a = 0; a < dim; ++a)
              for (int b = 0; b < dim; ++b)
                du[a * dim + b] =
                    tape.row_sum(tape.mul_const(comp_gather[a], qp.gradn[b]));
            NodeId dens;
            if (dim == 2) {
              NodeId exx = du[0], eyy = du[3];
              NodeId gxy = tape.add(du[1], du[2]);
              dens = tape.add(
                  tape.affine(tape.add(tape.square(exx), tape.square(eyy)),
                              lambda + 2 * mu, 0.0),
                  tape.add(tape.affine(tape.mul(exx, eyy), 2 * lambda, 0.0),
                           tape.affine(tape.square(gxy), mu, 0.0)));
            } else {
              NodeId exx = du[0], eyy = du[4], ezz = du[8];
              NodeId gxy = tape.add(du[1], du[3]);
              NodeId gyz = tape.add(du[5], du[7]);
              NodeId gxz = tape.add(du[2], du[6]);
              NodeId diag = tape.add(tape.square(exx),
                                     tape.add(tape.square(eyy), tape.square(ezz)));
              NodeId cross = tape.add(tape.mul(exx, eyy),
                                      tape.add(tape.mul(eyy, ezz), tape.mul(exx, ezz)));
              NodeId shear = tape.add(tape.square(gxy),
                                      tape.add(tape.square(gyz), tape.square(gxz)));
              dens = tape.add(tape.affine(diag, lambda + 2 * mu, 0.0),
                              tape.add(tape.affine(cross, 2 * lambda, 0.0),
                                       tape.affine(shear, mu, 0.0)));
            }
            terms.push_back(
                tape.sum(tape.mul_const(tape.mul(mult, dens), qp.half_wdet)));
          }
        } else {  // Hyperelastic
          NodeId mu_e = tape.mul_const(
              c_e, [&] {
                Mat m(node_count(mesh.elem_type), mesh.num_elements());
                for (int e = 0; e < mesh.num_elements(); ++e)
                  for (int a = 0; a < m.rows(); ++a)
                    m(a, e) = pb.mu_field[mesh.elements(a, e)];
                return std::make_shared<const Mat>(std::move(m));
              }());
          NodeId kap_e = tape.mul_const(
              c_e, [&] {
                Mat m(node_count(mesh.elem_type), mesh.num_elements());
                for (int e = 0; e < mesh.num_elements(); ++e)
                  for (int a = 0; a < m.rows(); ++a)
                    m(a, e) = pb.kappa_field[mesh.elements(a, e)];
                return std::make_shared<const Mat>(std::move(m));
              }());
          for (const auto& qp : qps) {
            NodeId muq = interp_const(qp, mu_e);
            NodeId kapq = interp_const(qp, kap_e);
            std::vector<NodeId> f(dim * dim);
            for (int a = 0; a < dim; ++a)
              for (int b = 0; b < dim; ++b)
                f[a * dim + b] = tape.affine(
                    tape.row_sum(tape.mul_const(comp_gather[a], qp.gradn[b])), 1.0,
                    a == b ? 1.0 : 0.0);
            NodeId jf, i1;
            if (dim == 2) {
              jf = tape.sub(tape.mul(f[0], f[3]), tape.mul(f[1], f[2]));
              NodeId ss = tape.add(tape.add(tape.square(f[0]), tape.square(f[1])),
                                   tape.add(tape.square(f[2]), tape.square(f[3])));
              i1 = tape.affine(ss, 1.0, 1.0);  // + F33^2 = 1
            } else {
              NodeId c0 = tape.sub(tape.mul(f[4], f[8]), tape.mul(f[5], f[7]));
              NodeId c1 = tape.sub(tape.mul(f[3], f[8]), tape.mul(f[5], f[6]));
              NodeId c2 = tape.sub(tape.mul(f[3], f[7]), tape.mul(f[4], f[6]));
              jf = tape.add(tape.sub(tape.mul(f[0], c0), tape.mul(f[1], c1)),
                            tape.mul(f[2], c2));
              NodeId ss = tape.square(f[0]);
              for (int q = 1; q < 9; ++q) ss = tape.add(ss, tape.square(f[q]));
              i1 = ss;
            }
            NodeId ibar1 = tape.mul(i1, tape.pow(jf, -2.0 / 3.0));
            NodeId wdev = tape.mul(muq, tape.affine(ibar1, 0.5, -1.5));
            NodeId wvol = tape.mul(
                kapq, tape.affine(tape.sub(tape.square(jf),
                                           tape.affine(tape.log(jf), 2.0, 1.0)),
                                  0.25, 0.0));
            terms.push_back(tape.sum(tape.mul_const(tape.add(wdev, wvol), qp.wdet)));
          }
        }
      },
      problem);

  NodeId loss = add_all(tape, terms);
  if (external_load) {
    Mat g(ndof, 1);
    for (int i = 0; i < ndof; ++i) g(i, 0) = (*external_load)[i];
    loss = tape.sub(loss, tape.dot(u_bc, tape.constant(std::move(g), "external_load")));
  }
  if (!j_terms.empty()) objective = add_all(tape, j_terms);

  LossGraph out;
  out.loss = loss;
  out.objective = objective;
  out.u_bc = u_bc;
  return out;
}

}  // namespace ifol
