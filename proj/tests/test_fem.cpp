#include "doctest.h"

#include <Eigen/Dense>

#include "ifol/fem.hpp"
#include "ifol/mesh.hpp"
#include "ifol/rng.hpp"
#include "ifol/tape.hpp"

using namespace ifol;

namespace {

Eigen::MatrixXd unit_box(int dim) {
  Eigen::MatrixXd b(dim, 2);
  for (int a = 0; a < dim; ++a) {
    b(a, 0) = 0;
    b(a, 1) = 1;
  }
  return b;
}

Mesh two_by_two() { return generate_grid(2, {3, 3}, unit_box(2)); }

Eigen::VectorXd random_vec(int n, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.uniform(-1, 1);
  return v;
}

Eigen::VectorXd positive_vec(int n, Rng& rng, double lo, double hi) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

PdeProblem make_variant(int which, const Mesh& mesh, Rng& rng) {
  const int m = mesh.num_nodes();
  switch (which) {
    case 0: {
      LinearElasticity p;
      p.youngs = 1.7;
      p.poisson = 0.3;
      return p;
    }
    case 1: {
      Hyperelastic p;
      p.mu_field = positive_vec(m, rng, 0.5, 1.5);
      p.kappa_field = positive_vec(m, rng, 1.0, 3.0);
      return p;
    }
    case 2: {
      StationaryDiffusion p;
      p.source = 0.3;
      return p;
    }
    case 3: {
      TransientThermal p;
      p.alpha = 0.8;
      p.rho_cp = 1.4;
      p.dt = 0.05;
      return p;
    }
    default: {
      AllenCahn p;
      p.eps = 0.23;
      p.dt = 0.04;
      return p;
    }
  }
}

// Displacements small enough to keep det(F) > 0 in the hyperelastic case.
double u_scale_for(int which) { return which == 1 ? 0.05 : 1.0; }

}  // namespace

TEST_CASE("constant field kills the diffusion gradient and loss") {
  Mesh mesh = generate_grid(2, {2, 2}, unit_box(2));
  StationaryDiffusion pb;
  Eigen::VectorXd u = Eigen::VectorXd::Constant(4, 0.8);
  Eigen::VectorXd c = Eigen::VectorXd::Constant(4, 1.7);
  ElementWork w = element_work(pb, mesh, 0, u, c, nullptr, false);
  CHECK(w.loss == doctest::Approx(0.0));
  CHECK(w.grad.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("unit-square Quad4 Laplacian stiffness matches the symbolic matrix") {
  Mesh mesh = generate_grid(2, {2, 2}, unit_box(2));
  StationaryDiffusion pb;  // k0 = 1, T = 0 baseline disables the quartic term
  Eigen::VectorXd u = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd c = Eigen::VectorXd::Ones(4);
  ElementWork w = element_work(pb, mesh, 0, u, c, nullptr, true);
  Eigen::MatrixXd expect(4, 4);
  const double d = 2.0 / 3.0, a = -1.0 / 6.0, o = -1.0 / 3.0;
  expect << d, a, o, a,
      a, d, a, o,
      o, a, d, a,
      a, o, a, d;
  CHECK((*w.hess - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Allen-Cahn wells: +-1 fields have zero double-well force") {
  Mesh mesh = generate_grid(2, {2, 2}, unit_box(2));
  AllenCahn pb;
  pb.dt = 1e9;  // suppress the time term so only the well acts
  for (double v : {1.0, -1.0}) {
    Eigen::VectorXd u = Eigen::VectorXd::Constant(4, v);
    Eigen::VectorXd uprev = u;
    Eigen::VectorXd c = Eigen::VectorXd::Ones(4);
    ElementWork w = element_work(pb, mesh, 0, u, c, &uprev, false);
    CHECK(w.grad.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("gradient and tangent match finite differences for all variants") {
  Mesh mesh = two_by_two();
  const int m = mesh.num_nodes();
  for (int which = 0; which < 5; ++which) {
    CAPTURE(which);
    for (int seed = 0; seed < 4; ++seed) {
      Rng rng(100 * which + seed);
      PdeProblem pb = make_variant(which, mesh, rng);
      const int ncomp = solution_components(pb, mesh.dim);
      const int ndof = m * ncomp;
      Eigen::VectorXd u = random_vec(ndof, rng, u_scale_for(which));
      Eigen::VectorXd c = positive_vec(m, rng, 0.5, 1.5);
      Eigen::VectorXd uprev = random_vec(ndof, rng);
      Eigen::VectorXd* up = is_transient(pb) ? &uprev : nullptr;
      DirichletSpec none;

      AssembleOptions opts;
      opts.want_tangent = true;
      GlobalWork w = assemble(pb, mesh, u, c, up, none, opts);

      const double h = 1e-5;
      auto loss_at = [&](const Eigen::VectorXd& uu) {
        AssembleOptions lo;
        lo.want_grad = false;
        return assemble(pb, mesh, uu, c, up, none, lo).loss;
      };
      for (int i = 0; i < ndof; ++i) {
        Eigen::VectorXd up1 = u, um1 = u;
        up1[i] += h;
        um1[i] -= h;
        const double fd = (loss_at(up1) - loss_at(um1)) / (2 * h);
        CHECK(std::abs(w.grad[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
      }

      // Tangent vs FD of the residual, plus symmetry for energy losses.
      Eigen::MatrixXd kd = Eigen::MatrixXd(*w.tangent);
      CHECK((kd - kd.transpose()).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, kd.cwiseAbs().maxCoeff()));
      auto grad_at = [&](const Eigen::VectorXd& uu) {
        AssembleOptions lo;
        return assemble(pb, mesh, uu, c, up, none, lo).grad;
      };
      for (int i = 0; i < ndof; i += 3) {  // sampled columns keep runtime low
        Eigen::VectorXd up1 = u, um1 = u;
        up1[i] += h;
        um1[i] -= h;
        Eigen::VectorXd fd = (grad_at(up1) - grad_at(um1)) / (2 * h);
        for (int r = 0; r < ndof; ++r)
          CHECK(std::abs(kd(r, i) - fd[r]) / std::max(1.0, std::abs(fd[r])) < 1e-5);
      }
    }
  }
}

TEST_CASE("assembled tangent equals a naive dense assembly oracle") {
  Mesh mesh = generate_grid(2, {3, 3}, unit_box(2));
  StationaryDiffusion pb;
  Rng rng(9);
  Eigen::VectorXd u = random_vec(9, rng);
  Eigen::VectorXd c = positive_vec(9, rng, 0.5, 2.0);
  DirichletSpec none;
  AssembleOptions opts;
  opts.want_tangent = true;
  GlobalWork w = assemble(pb, mesh, u, c, nullptr, none, opts);

  // Brute-force loop: per-element dense work scattered by hand.
  Eigen::MatrixXd kd = Eigen::MatrixXd::Zero(9, 9);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    Eigen::VectorXd ue(4), ce(4);
    for (int a = 0; a < 4; ++a) {
      ue[a] = u[mesh.elements(a, e)];
      ce[a] = c[mesh.elements(a, e)];
    }
    ElementWork ew = element_work(pb, mesh, e, ue, ce, nullptr, true);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        kd(mesh.elements(a, e), mesh.elements(b, e)) += (*ew.hess)(a, b);
  }
  CHECK((Eigen::MatrixXd(*w.tangent) - kd).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear solution of the Laplace configuration has zero free residual") {
  Mesh mesh = generate_grid(2, {3, 2}, unit_box(2));  // 2-element strip
  StationaryDiffusion pb;
  pb.quartic_coeff = 0.0;  // plain k = k0 conductivity
  Eigen::VectorXd u(mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) u[n] = 1.0 - mesh.coords(0, n);
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 1.0);
  bc.add_set(mesh, "right", 0, 0.0);
  AssembleOptions opts;
  GlobalWork w = assemble(pb, mesh, u, c, nullptr, bc, opts);
  CHECK(w.grad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero field gives zero loss and gradient for the quadratic losses") {
  Mesh mesh = two_by_two();
  StationaryDiffusion pb;
  Rng rng(3);
  Eigen::VectorXd c = positive_vec(mesh.num_nodes(), rng, 0.1, 2.0);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(mesh.num_nodes());
  DirichletSpec none;
  GlobalWork w = assemble(pb, mesh, u, c, nullptr, none, {});
  CHECK(w.loss == doctest::Approx(0.0));
  CHECK(w.grad.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("translation invariance of the linear-conductivity loss") {
  Mesh mesh = two_by_two();
  StationaryDiffusion pb;
  pb.quartic_coeff = 0.0;
  Rng rng(4);
  Eigen::VectorXd u = random_vec(mesh.num_nodes(), rng);
  Eigen::VectorXd c = positive_vec(mesh.num_nodes(), rng, 0.5, 2.0);
  DirichletSpec none;
  AssembleOptions lossonly;
  lossonly.want_grad = false;
  const double l0 = assemble(pb, mesh, u, c, nullptr, none, lossonly).loss;
  Eigen::VectorXd shifted = u.array() + 3.7;
  const double l1 = assemble(pb, mesh, shifted, c, nullptr, none, lossonly).loss;
  CHECK(l0 == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("hyperelastic energy is invariant under rigid translation") {
  Mesh mesh = two_by_two();
  Rng rng(5);
  Hyperelastic pb;
  pb.mu_field = positive_vec(mesh.num_nodes(), rng, 0.5, 1.0);
  pb.kappa_field = positive_vec(mesh.num_nodes(), rng, 1.0, 2.0);
  Eigen::VectorXd u = random_vec(2 * mesh.num_nodes(), rng, 0.05);
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec none;
  AssembleOptions lossonly;
  lossonly.want_grad = false;
  const double l0 = assemble(pb, mesh, u, c, nullptr, none, lossonly).loss;
  Eigen::VectorXd ushift = u;
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    ushift[2 * n] += 0.33;
    ushift[2 * n + 1] -= 0.71;
  }
  const double l1 = assemble(pb, mesh, ushift, c, nullptr, none, lossonly).loss;
  CHECK(std::abs(l0 - l1) < 1e-10 * std::max(1.0, std::abs(l0)));
}

TEST_CASE("transient time terms are nonnegative for any state pair") {
  Mesh mesh = two_by_two();
  TransientThermal pb;
  pb.alpha = 0.0;
  pb.rho_cp = 2.0;
  pb.dt = 0.1;
  Rng rng(6);
  for (int it = 0; it < 20; ++it) {
    Eigen::VectorXd u = Eigen::VectorXd::Constant(mesh.num_nodes(), rng.uniform(-1, 1));
    Eigen::VectorXd uprev = random_vec(mesh.num_nodes(), rng);
    Eigen::VectorXd c = positive_vec(mesh.num_nodes(), rng, 0.5, 1.0);
    DirichletSpec none;
    AssembleOptions lossonly;
    lossonly.want_grad = false;
    // Constant u has no gradient energy; what is left is the squared jump.
    const double l = assemble(pb, mesh, u, c, &uprev, none, lossonly).loss;
    CHECK(l >= -1e-14);
  }
}

TEST_CASE("apply_dirichlet overwrite semantics") {
  Eigen::VectorXd u(3);
  u << 1, 2, 3;
  DirichletSpec spec;
  spec.entries.push_back({0, 0, 9.0});
  Eigen::VectorXd v = apply_dirichlet(u, spec, 1);
  CHECK(v[0] == 9.0);
  CHECK(v[1] == 2.0);
  CHECK(v[2] == 3.0);

  DirichletSpec empty;
  CHECK((apply_dirichlet(u, empty, 1) - u).norm() == 0.0);

  DirichletSpec all;
  for (int i = 0; i < 3; ++i) all.entries.push_back({i, 0, 5.0});
  Eigen::VectorXd w1 = apply_dirichlet(u, all, 1);
  Eigen::VectorXd w2 = apply_dirichlet(2 * u, all, 1);
  CHECK((w1 - w2).norm() == 0.0);

  DirichletSpec dup;
  dup.entries.push_back({0, 0, 1.0});
  dup.entries.push_back({0, 0, 2.0});
  CHECK_THROWS_AS(dup.validate(3, 1), ConfigError);
}

TEST_CASE("missing u_prev for a transient problem is an error") {
  Mesh mesh = two_by_two();
  AllenCahn pb;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(mesh.num_nodes());
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec none;
  CHECK_THROWS_AS(assemble(pb, mesh, u, c, nullptr, none, {}), ConfigError);
}

TEST_CASE("boundary load: constant flux patch test on the unit square") {
  // k = 1 Laplace with flux q on the right edge and T = 0 on the left edge has
  // the exact solution T = q x; the FEM residual of its interpolant vanishes.
  Mesh mesh = generate_grid(2, {4, 3}, unit_box(2));
  StationaryDiffusion pb;
  pb.quartic_coeff = 0.0;
  const double q = 0.8;
  Eigen::VectorXd g = boundary_load(mesh, "right", 0, q, 1);
  CHECK(g.sum() == doctest::Approx(q * 1.0));  // total flux times edge length

  Eigen::VectorXd u(mesh.num_nodes());
  for (int n = 0; n < mesh.num_nodes(); ++n) u[n] = q * mesh.coords(0, n);
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 0.0);
  GlobalWork w = assemble(pb, mesh, u, c, nullptr, bc, {}, &g);
  CHECK(w.grad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("detach_residual gives the Galerkin residual with frozen conductivity") {
  Mesh mesh = generate_grid(2, {2, 2}, unit_box(2));
  StationaryDiffusion pb;
  Rng rng(8);
  Eigen::VectorXd u = random_vec(4, rng);
  Eigen::VectorXd c = positive_vec(4, rng, 0.5, 1.5);
  DirichletSpec none;

  AssembleOptions det;
  det.detach_residual = true;
  det.want_tangent = true;
  GlobalWork wd = assemble(pb, mesh, u, c, nullptr, none, det);

  // Tangent must be the exact Jacobian of the detached residual function.
  auto residual_at = [&](const Eigen::VectorXd& uu) {
    AssembleOptions o;
    o.detach_residual = true;
    return assemble(pb, mesh, uu, c, nullptr, none, o).grad;
  };
  const double h = 1e-6;
  Eigen::MatrixXd kd = Eigen::MatrixXd(*wd.tangent);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd up1 = u, um1 = u;
    up1[i] += h;
    um1[i] -= h;
    Eigen::VectorXd fd = (residual_at(up1) - residual_at(um1)) / (2 * h);
    for (int r = 0; r < 4; ++r)
      CHECK(std::abs(kd(r, i) - fd[r]) / std::max(1.0, std::abs(fd[r])) < 1e-5);
  }

  // The detached gradient is r = K(T) T, rebuilt here by direct quadrature.
  Eigen::VectorXd ue_loc(4), ce_loc(4);
  for (int a = 0; a < 4; ++a) {
    ue_loc[a] = u[mesh.elements(a, 0)];
    ce_loc[a] = c[mesh.elements(a, 0)];
  }
  ElementWork full = element_work(pb, mesh, 0, ue_loc, ce_loc, nullptr, false, true);
  Eigen::VectorXd ref = Eigen::VectorXd::Zero(4);
  {
    const QuadratureRule& rule = quadrature(mesh.elem_type);
    Eigen::MatrixXd ce(2, 4);
    for (int a = 0; a < 4; ++a) ce.col(a) = mesh.coords.col(mesh.elements(a, 0));
    for (int k = 0; k < rule.weights.size(); ++k) {
      ShapeEval se = shape_eval(mesh.elem_type, rule.points.col(k));
      GeomEval ge = geometry_map(ce, se);
      Eigen::VectorXd ue(4), cse(4);
      for (int a = 0; a < 4; ++a) {
        ue[a] = u[mesh.elements(a, 0)];
        cse[a] = c[mesh.elements(a, 0)];
      }
      const double tq = se.N.dot(ue);
      const double kq = se.N.dot(cse) * (1.0 + 2.0 * std::pow(tq, 4));
      Eigen::VectorXd gt = ge.gradN_x * ue;
      ref += rule.weights[k] * ge.det_jac * kq * (ge.gradN_x.transpose() * gt);
    }
  }
  CHECK((full.grad - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tape loss program agrees with element assembly for every variant") {
  Mesh mesh = two_by_two();
  const int m = mesh.num_nodes();
  for (int which = 0; which < 5; ++which) {
    CAPTURE(which);
    Rng rng(50 + which);
    PdeProblem pb = make_variant(which, mesh, rng);
    const int ncomp = solution_components(pb, mesh.dim);
    const int ndof = m * ncomp;
    Eigen::VectorXd u = random_vec(ndof, rng, u_scale_for(which));
    Eigen::VectorXd c = positive_vec(m, rng, 0.5, 1.5);
    Eigen::VectorXd uprev = random_vec(ndof, rng);

    DirichletSpec bc;
    bc.entries.push_back({0, 0, 0.37});
    Eigen::VectorXd mask = dirichlet_free_mask(bc, ndof, ncomp);
    Eigen::VectorXd bcv = Eigen::VectorXd::Zero(ndof);
    bcv[0] = 0.37;

    Tape tape;
    NodeId u_raw = tape.var(ndof, 1, "u");
    NodeId cn = tape.input(m, 1, "c");
    NodeId upn = is_transient(pb) ? tape.input(ndof, 1, "uprev") : NodeId{};
    NodeId bcn = tape.input(ndof, 1, "bc");
    LossGraph lg = build_loss_graph(tape, mesh, pb, u_raw, cn, upn, bcn, mask, false);
    tape.set_value(u_raw, u);
    tape.set_value(cn, c);
    if (is_transient(pb)) tape.set_value(upn, uprev);
    tape.set_value(bcn, bcv);
    tape.forward();

    Eigen::VectorXd u_bc = apply_dirichlet(u, bc, ncomp);
    AssembleOptions opts;
    GlobalWork w = assemble(pb, mesh, u_bc, c, is_transient(pb) ? &uprev : nullptr, bc, opts);
    CHECK(tape.scalar(lg.loss) == doctest::Approx(w.loss).epsilon(1e-12));

    tape.backward(lg.loss, {u_raw});
    Eigen::VectorXd tg = tape.adjoint(u_raw).matrix();
    // The graph's hard-BC mask already zeroes prescribed entries.
    CHECK((tg - w.grad).cwiseAbs().maxCoeff() <
          1e-11 * std::max(1.0, w.grad.cwiseAbs().maxCoeff()));

    if (ncomp == 1) {
      Eigen::VectorXd dj;
      const double jval = integrate_solution(pb, mesh, u_bc, &dj);
      CHECK(tape.scalar(lg.objective) == doctest::Approx(jval).epsilon(1e-12));
    }
  }
}

TEST_CASE("inverted elements are reported through assembly") {
  Mesh mesh = generate_grid(2, {3, 3}, unit_box(2));
  Mesh bad = mesh;
  bad.coords(0, 4) = 5.0;  // fold the center node far outside
  StationaryDiffusion pb;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(9);
  Eigen::VectorXd c = Eigen::VectorXd::Ones(9);
  DirichletSpec none;
  CHECK_THROWS_AS(assemble(pb, bad, u, c, nullptr, none, {}), NumericalError);
}
