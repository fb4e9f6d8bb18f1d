#pragma once

// Element-level loss kernels, templated on the scalar type. With double they
// give the loss, with Dual1 the exact residual, with Dual2 tangents and
// control-field Jacobians. Internal to the fem translation unit.

#include <Eigen/Dense>

#include "ifol/dual.hpp"
#include "ifol/fem.hpp"
#include "ifol/mesh.hpp"

namespace ifol::kernels {

struct ElemGeom {
  int nodes = 0;
  int dim = 0;
  int nqp = 0;
  std::vector<Eigen::VectorXd> N;        // per qp, nodes
  std::vector<Eigen::MatrixXd> gradN;    // per qp, dim x nodes
  std::vector<double> wdet;              // per qp
};

inline ElemGeom elem_geom(const Mesh& mesh, int e) {
  ElemGeom g;
  g.nodes = node_count(mesh.elem_type);
  g.dim = mesh.dim;
  const QuadratureRule& rule = quadrature(mesh.elem_type);
  g.nqp = static_cast<int>(rule.weights.size());
  Eigen::MatrixXd coords_e(mesh.dim, g.nodes);
  for (int a = 0; a < g.nodes; ++a) coords_e.col(a) = mesh.coords.col(mesh.elements(a, e));
  for (int k = 0; k < g.nqp; ++k) {
    ShapeEval se = shape_eval(mesh.elem_type, rule.points.col(k));
    GeomEval ge = geometry_map(coords_e, se, e);
    g.N.push_back(se.N);
    g.gradN.push_back(ge.gradN_x);
    g.wdet.push_back(rule.weights[k] * ge.det_jac);
  }
  return g;
}

// Strips the innermost derivative level: the differentiation direction that
// produces the residual. Keeps outer (tangent) levels intact so the detached
// residual's Jacobian is still exact.
inline double strip_inner(double x) { return x; }
inline Dual1 strip_inner(const Dual1& x) { return {x.v, 0.0}; }
inline Dual2 strip_inner(const Dual2& x) { return {x.v, Dual1{0.0, 0.0}}; }

template <class T>
T interp(const Eigen::VectorXd& N, const T* vals) {
  T s = N[0] * vals[0];
  for (int i = 1; i < N.size(); ++i) s = s + N[i] * vals[i];
  return s;
}

template <class T>
T grad_component(const Eigen::MatrixXd& gradN, int axis, const T* vals) {
  T s = gradN(axis, 0) * vals[0];
  for (int i = 1; i < gradN.cols(); ++i) s = s + gradN(axis, i) * vals[i];
  return s;
}

template <class T>
T loss_diffusion(const StationaryDiffusion& pb, const ElemGeom& g, const T* u,
                 const T* c, bool detach) {
  T loss(0.0);
  for (int k = 0; k < g.nqp; ++k) {
    T k0q = interp(g.N[k], c);
    T gsq(0.0);
    for (int d = 0; d < g.dim; ++d) {
      T gd = grad_component(g.gradN[k], d, u);
      gsq = gsq + gd * gd;
    }
    T tq = interp(g.N[k], u);
    T td = detach ? strip_inner(tq) : tq;
    T t2 = td * td;
    T kq = k0q * (1.0 + pb.quartic_coeff * (t2 * t2));
    loss = loss + 0.5 * g.wdet[k] * (kq * gsq);
    if (pb.source != 0.0) loss = loss - g.wdet[k] * pb.source * tq;
  }
  return loss;
}

template <class T>
T loss_transient_thermal(const TransientThermal& pb, const ElemGeom& g, const T* u,
                         const T* c, const double* uprev, bool detach) {
  T loss(0.0);
  for (int k = 0; k < g.nqp; ++k) {
    T k0q = interp(g.N[k], c);
    T gsq(0.0);
    for (int d = 0; d < g.dim; ++d) {
      T gd = grad_component(g.gradN[k], d, u);
      gsq = gsq + gd * gd;
    }
    T tq = interp(g.N[k], u);
    T td = detach ? strip_inner(tq) : tq;
    T kq = k0q * (1.0 + pb.alpha * td);
    double tprev = 0.0;
    for (int i = 0; i < g.nodes; ++i) tprev += g.N[k][i] * uprev[i];
    T dt_jump = tq - tprev;
    loss = loss + 0.5 * g.wdet[k] * (kq * gsq) +
           0.5 * g.wdet[k] * pb.rho_cp * (dt_jump * dt_jump) / pb.dt;
    if (pb.source != 0.0) loss = loss - g.wdet[k] * pb.source * tq;
  }
  return loss;
}

template <class T>
T loss_allen_cahn(const AllenCahn& pb, const ElemGeom& g, const T* u,
                  const double* uprev) {
  const double inv_eps2 = 1.0 / (pb.eps * pb.eps);
  T loss(0.0);
  for (int k = 0; k < g.nqp; ++k) {
    T gsq(0.0);
    for (int d = 0; d < g.dim; ++d) {
      T gd = grad_component(g.gradN[k], d, u);
      gsq = gsq + gd * gd;
    }
    T pq = interp(g.N[k], u);
    double pprev = 0.0;
    for (int i = 0; i < g.nodes; ++i) pprev += g.N[k][i] * uprev[i];
    T jump = pq - pprev;
    T well = pq * pq - 1.0;
    loss = loss + 0.5 * g.wdet[k] * gsq +
           0.5 * g.wdet[k] * (jump * jump) / pb.dt +
           0.25 * g.wdet[k] * inv_eps2 * (well * well);
  }
  return loss;
}

template <class T>
T loss_linear_elasticity(const LinearElasticity& pb, const ElemGeom& g, const T* u,
                         const T* c, double lambda, double mu) {
  T loss(0.0);
  for (int k = 0; k < g.nqp; ++k) {
    T mult = interp(g.N[k], c);
    const Eigen::MatrixXd& G = g.gradN[k];
    T dens(0.0);
    if (g.dim == 2) {
      T exx(0.0), eyy(0.0), gxy(0.0);
      for (int i = 0; i < g.nodes; ++i) {
        exx = exx + G(0, i) * u[2 * i];
        eyy = eyy + G(1, i) * u[2 * i + 1];
        gxy = gxy + G(1, i) * u[2 * i] + G(0, i) * u[2 * i + 1];
      }
      dens = (lambda + 2.0 * mu) * (exx * exx + eyy * eyy) +
             2.0 * lambda * (exx * eyy) + mu * (gxy * gxy);
    } else {
      T exx(0.0), eyy(0.0), ezz(0.0), gxy(0.0), gyz(0.0), gxz(0.0);
      for (int i = 0; i < g.nodes; ++i) {
        exx = exx + G(0, i) * u[3 * i];
        eyy = eyy + G(1, i) * u[3 * i + 1];
        ezz = ezz + G(2, i) * u[3 * i + 2];
        gxy = gxy + G(1, i) * u[3 * i] + G(0, i) * u[3 * i + 1];
        gyz = gyz + G(2, i) * u[3 * i + 1] + G(1, i) * u[3 * i + 2];
        gxz = gxz + G(2, i) * u[3 * i] + G(0, i) * u[3 * i + 2];
      }
      dens = (lambda + 2.0 * mu) * (exx * exx + eyy * eyy + ezz * ezz) +
             2.0 * lambda * (exx * eyy + eyy * ezz + exx * ezz) +
             mu * (gxy * gxy + gyz * gyz + gxz * gxz);
    }
    loss = loss + 0.5 * g.wdet[k] * (mult * dens);
  }
  return loss;
}

template <class T>
T loss_hyperelastic(const Hyperelastic&, const ElemGeom& g, const T* u, const T* c,
                    const double* mu_base, const double* kappa_base) {
  T loss(0.0);
  for (int k = 0; k < g.nqp; ++k) {
    T muq(0.0), kapq(0.0);
    for (int i = 0; i < g.nodes; ++i) {
      muq = muq + g.N[k][i] * (mu_base[i] * c[i]);
      kapq = kapq + g.N[k][i] * (kappa_base[i] * c[i]);
    }
    const Eigen::MatrixXd& G = g.gradN[k];
    // F = I + du/dX, padded with F33 = 1 in plane strain.
    T F[3][3];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) F[a][b] = T(a == b ? 1.0 : 0.0);
    for (int a = 0; a < g.dim; ++a)
      for (int b = 0; b < g.dim; ++b) {
        T s(0.0);
        for (int i = 0; i < g.nodes; ++i) s = s + G(b, i) * u[g.dim * i + a];
        F[a][b] = F[a][b] + s;
      }
    T jf = g.dim == 2
               ? F[0][0] * F[1][1] - F[0][1] * F[1][0]
               : F[0][0] * (F[1][1] * F[2][2] - F[1][2] * F[2][1]) -
                     F[0][1] * (F[1][0] * F[2][2] - F[1][2] * F[2][0]) +
                     F[0][2] * (F[1][0] * F[2][1] - F[1][1] * F[2][0]);
    T i1(0.0);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) i1 = i1 + F[a][b] * F[a][b];
    T ibar1 = i1 * pow(jf, -2.0 / 3.0);
    T w = 0.5 * (muq * (ibar1 - 3.0)) +
          0.25 * (kapq * (jf * jf - 2.0 * log(jf) - 1.0));
    loss = loss + g.wdet[k] * w;
  }
  return loss;
}

/// Dispatch over the PDE variants. mu/kappa bases are only read by the
/// hyperelastic branch.
template <class T>
T element_loss(const PdeProblem& problem, const ElemGeom& g, const T* u, const T* c,
               const double* uprev, const double* base1, const double* base2,
               double lambda, double mu, bool detach) {
  return std::visit(
      [&](const auto& pb) -> T {
        using P = std::decay_t<decltype(pb)>;
        if constexpr (std::is_same_v<P, StationaryDiffusion>)
          return loss_diffusion(pb, g, u, c, detach);
        else if constexpr (std::is_same_v<P, TransientThermal>)
          return loss_transient_thermal(pb, g, u, c, uprev, detach);
        else if constexpr (std::is_same_v<P, AllenCahn>)
          return loss_allen_cahn(pb, g, u, uprev);
        else if constexpr (std::is_same_v<P, LinearElasticity>)
          return loss_linear_elasticity(pb, g, u, c, lambda, mu);
        else
          return loss_hyperelastic(pb, g, u, c, base1, base2);
      },
      problem);
}

}  // namespace ifol::kernels
