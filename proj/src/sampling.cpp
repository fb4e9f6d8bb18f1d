#include "ifol/sampling.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "ifol/rng.hpp"

namespace ifol {

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "fourier") return DatasetKind::Fourier;
  if (s == "fourier_sigmoid") return DatasetKind::FourierSigmoid;
  if (s == "grf") return DatasetKind::Grf;
  if (s == "bc_gaussian") return DatasetKind::BcGaussian;
  throw ConfigError("unknown dataset kind '" + s + "'");
}

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Fourier: return "fourier";
    case DatasetKind::FourierSigmoid: return "fourier_sigmoid";
    case DatasetKind::Grf: return "grf";
    case DatasetKind::BcGaussian: return "bc_gaussian";
  }
  return "?";
}

Eigen::VectorXd fourier_field(const Mesh& mesh, const FourierSpec& spec,
                              std::uint64_t seed) {
  if (spec.freq_x.empty() || spec.freq_y.empty() || spec.freq_z.empty())
    throw ConfigError("fourier: frequency lists must be nonempty");
  if (!(spec.out_lo < spec.out_hi))
    throw ConfigError("fourier: out range must satisfy min < max");
  Rng rng(seed);
  const int m = mesh.num_nodes();
  Eigen::VectorXd field = Eigen::VectorXd::Zero(m);
  const double pi = 3.14159265358979323846;
  for (int fx : spec.freq_x)
    for (int fy : spec.freq_y)
      for (int fz : spec.freq_z) {
        const double a = rng.uniform(spec.coeff_lo, spec.coeff_hi);
        for (int n = 0; n < m; ++n) {
          double v = a * std::cos(pi * fx * mesh.coords(0, n)) *
                     std::cos(pi * fy * mesh.coords(1, n));
          if (mesh.dim == 3) v *= std::cos(pi * fz * mesh.coords(2, n));
          field[n] += v;
        }
      }
  const double lo = field.minCoeff(), hi = field.maxCoeff();
  if (!(hi - lo > 1e-12))
    throw NumericalError("fourier: raw field has no dynamic range to rescale");
  return spec.out_lo + (spec.out_hi - spec.out_lo) * (field.array() - lo) / (hi - lo);
}

Eigen::VectorXd sigmoid_project(const Eigen::VectorXd& field, const SigmoidSpec& spec) {
  Eigen::VectorXd out(field.size());
  for (int i = 0; i < field.size(); ++i) {
    const double z = spec.sharpness * (field[i] - 0.5);
    out[i] = spec.scale / (1.0 + std::exp(-z)) + spec.floor;
  }
  return out;
}

Eigen::VectorXd grf_field(const Mesh& mesh, const GrfSpec& spec, std::uint64_t seed) {
  if (!(spec.lengthscale > 0)) throw ConfigError("grf: lengthscale must be positive");
  const int m = mesh.num_nodes();
  Eigen::MatrixXd k(m, m);
  const double inv2l2 = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j) {
      const double d2 = (mesh.coords.col(i) - mesh.coords.col(j)).squaredNorm();
      k(i, j) = k(j, i) = std::exp(-d2 * inv2l2);
    }
  Rng rng(seed);
  Eigen::VectorXd z(m);
  for (int i = 0; i < m; ++i) z[i] = rng.gaussian();

  double jitter = spec.jitter > 0 ? spec.jitter : 1e-8;
  while (jitter <= 1e-4) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return llt.matrixL() * z;
    jitter *= 10.0;
  }
  throw NumericalError("grf: Cholesky failed even with jitter 1e-4");
}

Eigen::VectorXd random_bc_vector(std::uint64_t seed, double magnitude, int components) {
  if (!(magnitude > 0)) throw ConfigError("random_bc_vector: magnitude must be positive");
  Rng rng(seed);
  Eigen::VectorXd v(components);
  for (int i = 0; i < components; ++i) v[i] = magnitude * rng.gaussian();
  return v;
}

std::vector<Sample> make_dataset(const DatasetSpec& spec, int n, const Mesh& mesh,
                                 std::uint64_t seed) {
  if (n < 1) throw ConfigError("make_dataset: n must be >= 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.seed = seed + static_cast<std::uint64_t>(i);
    switch (spec.kind) {
      case DatasetKind::Fourier:
        s.c = fourier_field(mesh, spec.fourier, s.seed);
        break;
      case DatasetKind::FourierSigmoid: {
        FourierSpec unit = spec.fourier;
        unit.out_lo = 0.0;
        unit.out_hi = 1.0;
        s.c = sigmoid_project(fourier_field(mesh, unit, s.seed), spec.sigmoid);
        break;
      }
      case DatasetKind::Grf: {
        GrfSpec g = spec.grf;
        if (spec.grf_lengthscale_max > spec.grf.lengthscale) {
          Rng pick(stream_seed(s.seed, "grf-length"));
          g.lengthscale = pick.uniform(spec.grf.lengthscale, spec.grf_lengthscale_max);
        }
        s.u_prev = grf_field(mesh, g, s.seed);
        break;
      }
      case DatasetKind::BcGaussian:
        s.bc = random_bc_vector(s.seed, spec.bc_magnitude, spec.bc_components);
        break;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ifol
