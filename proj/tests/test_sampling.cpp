#include "doctest.h"

#include "ifol/rng.hpp"
#include "ifol/sampling.hpp"

using namespace ifol;

namespace {

Mesh grid(int n) {
  Eigen::MatrixXd b(2, 2);
  b << 0, 1, 0, 1;
  return generate_grid(2, {n, n}, b);
}

}  // namespace

TEST_CASE("fourier fields hit the requested range and are deterministic") {
  Mesh mesh = grid(21);
  FourierSpec spec;
  spec.freq_x = {2};
  spec.freq_y = {4};
  spec.out_lo = 0.0;
  spec.out_hi = 1.0;
  Eigen::VectorXd f = fourier_field(mesh, spec, 5);
  CHECK(f.minCoeff() == doctest::Approx(0.0));
  CHECK(f.maxCoeff() == doctest::Approx(1.0));
  CHECK((f - fourier_field(mesh, spec, 5)).norm() == 0.0);
  CHECK((f - fourier_field(mesh, spec, 6)).norm() > 0.0);
}

TEST_CASE("fourier fields live in the 9-product cosine basis") {
  Mesh mesh = grid(13);
  FourierSpec spec;  // {2,4,6} x {2,4,6}
  Eigen::VectorXd f = fourier_field(mesh, spec, 11);
  // Least-squares fit on the 9 basis products plus a constant (the rescale
  // introduces an affine shift); the residual must vanish.
  const int m = mesh.num_nodes();
  Eigen::MatrixXd basis(m, 10);
  int col = 0;
  const double pi = 3.14159265358979323846;
  for (int fx : spec.freq_x)
    for (int fy : spec.freq_y) {
      for (int n = 0; n < m; ++n)
        basis(n, col) = std::cos(pi * fx * mesh.coords(0, n)) *
                        std::cos(pi * fy * mesh.coords(1, n));
      ++col;
    }
  basis.col(9).setOnes();
  Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(f);
  CHECK((basis * coef - f).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("sigmoid projection matches the printed formula") {
  SigmoidSpec s;
  Eigen::VectorXd x(3);
  x << 0.5, 1.0, 0.0;
  Eigen::VectorXd y = sigmoid_project(x, s);
  CHECK(y[0] == doctest::Approx(0.525).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.95 / (1 + std::exp(-10.0)) + 0.05).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(0.95 / (1 + std::exp(10.0)) + 0.05).epsilon(1e-12));
  CHECK(y[1] > 0.9999);
  CHECK(y[2] < 0.0501);
  // Output stays inside (floor, floor + scale); values outside [0,1] are
  // allowed and saturate (to the bounds exactly once the sigmoid underflows).
  Rng rng(1);
  Eigen::VectorXd big(100);
  for (int i = 0; i < 100; ++i) big[i] = rng.uniform(-0.5, 1.5);
  Eigen::VectorXd z = sigmoid_project(big, s);
  CHECK(z.minCoeff() > s.floor);
  CHECK(z.maxCoeff() < s.floor + s.scale);
  Eigen::VectorXd sat(2);
  sat << -100.0, 100.0;
  Eigen::VectorXd zs = sigmoid_project(sat, s);
  CHECK(zs.minCoeff() >= s.floor);
  CHECK(zs.maxCoeff() <= s.floor + s.scale);
}

TEST_CASE("grf: unit variance, distance decorrelation, lengthscale limit") {
  Mesh mesh = grid(3);  // 9 nodes
  GrfSpec spec;
  spec.lengthscale = 0.15;
  const int draws = 10000;
  Eigen::MatrixXd samples(mesh.num_nodes(), draws);
  for (int d = 0; d < draws; ++d) samples.col(d) = grf_field(mesh, spec, 1000 + d);

  // Node variance ~ 1 + jitter.
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const double var = samples.row(n).array().square().mean() -
                       std::pow(samples.row(n).mean(), 2);
    CHECK(var == doctest::Approx(1.0).epsilon(0.08));
  }
  // Far-apart corner pair (distance sqrt(2) >> 0.15): |rho| < 0.05.
  {
    Eigen::ArrayXd a = samples.row(0).array(), b = samples.row(8).array();
    const double rho = ((a - a.mean()) * (b - b.mean())).mean() /
                       std::sqrt((a - a.mean()).square().mean() *
                                 (b - b.mean()).square().mean());
    CHECK(std::abs(rho) < 0.05);
  }
  // Empirical covariance matches the kernel within 0.1 absolute (5-node mesh).
  {
    Mesh small = generate_grid(2, {5, 2}, [] {
      Eigen::MatrixXd b(2, 2);
      b << 0, 1, 0, 0.05;
      return b;
    }());
    GrfSpec s2;
    s2.lengthscale = 0.3;
    const int n2 = small.num_nodes();
    Eigen::MatrixXd ss(n2, 2000);
    for (int d = 0; d < 2000; ++d) ss.col(d) = grf_field(small, s2, 77 + d);
    for (int i = 0; i < n2; ++i)
      for (int j = 0; j < n2; ++j) {
        const double cov = (ss.row(i).array() * ss.row(j).array()).mean() -
                           ss.row(i).mean() * ss.row(j).mean();
        const double kij = std::exp(
            -(small.coords.col(i) - small.coords.col(j)).squaredNorm() /
            (2 * s2.lengthscale * s2.lengthscale));
        CHECK(std::abs(cov - kij) < 0.1);
      }
  }
  // Large lengthscale: near-constant fields (deviation scales like d/l).
  GrfSpec wide;
  wide.lengthscale = 50.0;
  Eigen::VectorXd f = grf_field(mesh, wide, 3);
  CHECK((f.array() - f.mean()).abs().maxCoeff() < 0.05);
  wide.lengthscale = 500.0;
  Eigen::VectorXd f2 = grf_field(mesh, wide, 3);
  CHECK((f2.array() - f2.mean()).abs().maxCoeff() <
        0.2 * (f.array() - f.mean()).abs().maxCoeff());
}

TEST_CASE("random bc vectors: reproducible, scaled, centered") {
  Eigen::VectorXd v = random_bc_vector(9, 0.01, 2);
  CHECK((v - random_bc_vector(9, 0.01, 2)).norm() == 0.0);
  CHECK(v.cwiseAbs().maxCoeff() < 0.1);  // O(magnitude)

  double mean = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) mean += random_bc_vector(100 + i, 1.0, 1)[0];
  mean /= n;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("make_dataset: counts, seeds, determinism, disjointness") {
  Mesh mesh = grid(5);
  DatasetSpec spec;
  spec.kind = DatasetKind::FourierSigmoid;
  spec.fourier.freq_x = {1, 2, 3};
  spec.fourier.freq_y = {1, 2, 3};
  auto one = make_dataset(spec, 1, mesh, 0);
  CHECK(one.size() == 1);
  auto train = make_dataset(spec, 4, mesh, 0);
  auto test = make_dataset(spec, 2, mesh, 100);
  for (const auto& a : train)
    for (const auto& b : test) CHECK((a.c - b.c).norm() > 0.0);
  auto again = make_dataset(spec, 4, mesh, 0);
  for (int i = 0; i < 4; ++i) {
    CHECK(train[i].seed == static_cast<std::uint64_t>(i));
    CHECK((train[i].c - again[i].c).norm() == 0.0);
    CHECK(train[i].c.minCoeff() > 0.05);
    CHECK(train[i].c.maxCoeff() < 1.0);
  }

  DatasetSpec gs;
  gs.kind = DatasetKind::Grf;
  gs.grf.lengthscale = 0.1;
  gs.grf_lengthscale_max = 0.4;
  auto g = make_dataset(gs, 3, mesh, 7);
  for (const auto& s : g) {
    REQUIRE(s.u_prev.has_value());
    CHECK(s.u_prev->size() == mesh.num_nodes());
  }

  CHECK_THROWS_AS(make_dataset(spec, 0, mesh, 0), ConfigError);
}
