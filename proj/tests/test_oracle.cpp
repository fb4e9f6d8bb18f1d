#include "doctest.h"

#include "ifol/oracle.hpp"
#include "ifol/rng.hpp"

using namespace ifol;

namespace {

Eigen::MatrixXd unit_box2() {
  Eigen::MatrixXd b(2, 2);
  b << 0, 1, 0, 1;
  return b;
}

}  // namespace

TEST_CASE("linear_solve basics") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd b(3);
  b << 1, 2, 3;
  CHECK((linear_solve(eye, b) - b).norm() == 0.0);

  Eigen::MatrixXd a(2, 2);
  a << 2, 1, 1, 3;
  Eigen::VectorXd b2(2);
  b2 << 3, 5;
  Eigen::VectorXd x = linear_solve(a, b2);
  CHECK(x[0] == doctest::Approx(4.0 / 5.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(7.0 / 5.0).epsilon(1e-12));

  Eigen::VectorXd xcg = linear_solve(a, b2, LinearMethod::Cg);
  CHECK((xcg - x).norm() < 1e-10);

  Eigen::MatrixXd sing = Eigen::MatrixXd::Zero(2, 2);
  sing(0, 0) = 1.0;
  CHECK_THROWS_AS(linear_solve(sing, b2), NumericalError);
}

TEST_CASE("newton converges in one iteration on a linear problem") {
  Mesh mesh = generate_grid(2, {5, 5}, unit_box2());
  StationaryDiffusion pb;
  pb.quartic_coeff = 0.0;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 1.0);
  bc.add_set(mesh, "right", 0, 0.0);
  NewtonConfig cfg;
  int iters = -1;
  Eigen::VectorXd u = newton_solve(pb, mesh, c, bc, {}, cfg, nullptr, nullptr, &iters);
  CHECK(iters == 1);
  // 1D-like solution: T = 1 - x at every node.
  for (int n = 0; n < mesh.num_nodes(); ++n)
    CHECK(u[n] == doctest::Approx(1.0 - mesh.coords(0, n)).epsilon(1e-10));
}

TEST_CASE("manufactured linear solution is reproduced to 1e-12") {
  Mesh mesh = generate_grid(2, {4, 4}, unit_box2());
  StationaryDiffusion pb;
  pb.quartic_coeff = 0.0;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  // Dirichlet everywhere on left/right matching u = x.
  bc.add_set(mesh, "left", 0, 0.0);
  bc.add_set(mesh, "right", 0, 1.0);
  Eigen::VectorXd u = newton_solve(pb, mesh, c, bc, {}, NewtonConfig{});
  for (int n = 0; n < mesh.num_nodes(); ++n)
    CHECK(std::abs(u[n] - mesh.coords(0, n)) < 1e-12);
}

TEST_CASE("nonlinear diffusion on an 11x11 grid: residual < 1e-10 within 10 iters") {
  Mesh mesh = generate_grid(2, {11, 11}, unit_box2());
  StationaryDiffusion pb;  // k = k0 (1 + 2 T^4)
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 1.0);
  bc.add_set(mesh, "right", 0, 0.0);
  NewtonConfig cfg;  // tol 1e-10, max 10 iterations
  int iters = -1;
  Eigen::VectorXd u = newton_solve(pb, mesh, c, bc, {}, cfg, nullptr, nullptr, &iters);
  CHECK(iters <= 10);
  GlobalWork w = assemble(pb, mesh, u, c, nullptr, bc, {});
  CHECK(w.grad.norm() < 1e-10);  // energy consistency at the converged state
  CHECK(u.minCoeff() > -1e-12);
  CHECK(u.maxCoeff() < 1.0 + 1e-12);
}

TEST_CASE("adjoint sensitivity: mirror symmetry and FD re-solve agreement") {
  Mesh mesh = generate_grid(2, {4, 4}, unit_box2());
  StationaryDiffusion pb;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 1.0);
  bc.add_set(mesh, "right", 0, 0.0);
  NewtonConfig ncfg;
  Eigen::VectorXd u = newton_solve(pb, mesh, c, bc, {}, ncfg);
  SensitivityResult sr = adjoint_sensitivity(pb, mesh, c, u, bc);
  CHECK(sr.map.size() == mesh.num_nodes());

  // Symmetry of the uniform-k configuration under the y-mirror.
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) {
      const int n = j * 4 + i;
      const int nm = (3 - j) * 4 + i;
      CHECK(sr.map[n] == doctest::Approx(sr.map[nm]).epsilon(1e-8));
    }

  // FD re-solve oracle on every node.
  const double h = 1e-5;
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    Eigen::VectorXd cp = c, cm = c;
    cp[n] += h;
    cm[n] -= h;
    Eigen::VectorXd up = newton_solve(pb, mesh, cp, bc, u, ncfg);
    Eigen::VectorXd um = newton_solve(pb, mesh, cm, bc, u, ncfg);
    const double jp = integrate_solution(pb, mesh, up);
    const double jm = integrate_solution(pb, mesh, um);
    const double fd = (jp - jm) / (2 * h);
    CHECK(std::abs(sr.map[n] - fd) / std::max(1e-6, std::abs(fd)) < 1e-3);
  }
}

TEST_CASE("allen-cahn wells are exact fixed points of the FEM rollout") {
  Mesh mesh = generate_grid(2, {6, 6}, unit_box2());
  AllenCahn pb;
  pb.eps = 0.1;
  pb.dt = 0.02;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  Eigen::VectorXd u0 = Eigen::VectorXd::Constant(mesh.num_nodes(), 1.0);
  DirichletSpec none;  // zero-flux boundaries
  auto seq = fem_rollout(pb, mesh, c, none, u0, 10, NewtonConfig{});
  REQUIRE(seq.size() == 10);
  CHECK((seq.back().array() - 1.0).abs().maxCoeff() < 1e-10);
}

TEST_CASE("transient thermal single implicit-Euler step decays toward steady state") {
  Mesh mesh = generate_grid(2, {6, 6}, unit_box2());
  TransientThermal pb;
  pb.alpha = 0.5;
  pb.rho_cp = 1.0;
  pb.dt = 0.05;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  Rng rng(3);
  Eigen::VectorXd u0(mesh.num_nodes());
  for (int i = 0; i < u0.size(); ++i) u0[i] = rng.uniform(0, 1);
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 0.0);
  bc.add_set(mesh, "right", 0, 0.0);
  u0 = apply_dirichlet(u0, bc, 1);
  auto seq = fem_rollout(pb, mesh, c, bc, u0, 20, NewtonConfig{});
  // Diffusion with zero boundary data damps the field.
  CHECK(seq.back().cwiseAbs().maxCoeff() < u0.cwiseAbs().maxCoeff());
}

TEST_CASE("error metrics") {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 1, 0;
  ErrorMetrics m = error_metrics(b, a);
  CHECK(m.rel_l2 == 0.0);
  CHECK(m.max_pointwise == 0.0);

  Eigen::VectorXd p(2);
  p << 1, 1;
  m = error_metrics(p, a);
  CHECK(m.rel_l2 == doctest::Approx(1.0));
  CHECK(m.max_pointwise == doctest::Approx(1.0));

  ErrorMetrics m2 = error_metrics(2 * p, 2 * a);
  CHECK(m2.rel_l2 == doctest::Approx(1.0));

  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  CHECK(error_metrics(z, z).rel_l2 == 0.0);
}

TEST_CASE("newton reports non-convergence with the last residual norm") {
  Mesh mesh = generate_grid(2, {5, 5}, unit_box2());
  StationaryDiffusion pb;
  Eigen::VectorXd c = Eigen::VectorXd::Ones(mesh.num_nodes());
  DirichletSpec bc;
  bc.add_set(mesh, "left", 0, 1.0);
  bc.add_set(mesh, "right", 0, 0.0);
  NewtonConfig cfg;
  cfg.max_iters = 1;
  cfg.tol_residual = 1e-14;
  try {
    newton_solve(pb, mesh, c, bc, {}, cfg);
    CHECK(false);
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("residual") != std::string::npos);
  }
}
