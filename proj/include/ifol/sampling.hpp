#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ifol/mesh.hpp"

namespace ifol {

/// One training/evaluation instance: a nodal control field and/or a
/// previous-step field (transient problems) and/or a boundary-value vector.
struct Sample {
  std::uint64_t seed = 0;
  Eigen::VectorXd c;                     // nodal control field (may be empty)
  std::optional<Eigen::VectorXd> u_prev; // previous-step nodal field
  std::optional<Eigen::VectorXd> bc;     // per-component boundary values
};

struct FourierSpec {
  std::vector<int> freq_x = {2, 4, 6};
  std::vector<int> freq_y = {2, 4, 6};
  std::vector<int> freq_z = {0};
  double coeff_lo = -1.0, coeff_hi = 1.0;
  double out_lo = 0.0, out_hi = 1.0;
};

struct SigmoidSpec {
  double sharpness = 20.0;
  double floor = 0.05;
  double scale = 0.95;
};

struct GrfSpec {
  double lengthscale = 0.2;   // RBF kernel length
  double jitter = 1e-8;       // diagonal regularizer, escalated x10 up to 1e-4
};

enum class DatasetKind { Fourier, FourierSigmoid, Grf, BcGaussian };

DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(DatasetKind k);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::FourierSigmoid;
  FourierSpec fourier;
  SigmoidSpec sigmoid;
  GrfSpec grf;
  double grf_lengthscale_max = 0.0;  // > 0 draws per-sample from [lengthscale, max]
  double bc_magnitude = 0.01;
  int bc_components = 2;
};

/// Cosine-product random field: sum over frequency tuples of
/// a * cos(pi f_x x) cos(pi f_y y) [cos(pi f_z z)], coefficients uniform in
/// [coeff_lo, coeff_hi], then min-max rescaled to [out_lo, out_hi] over the
/// mesh nodes. Deterministic per seed.
Eigen::VectorXd fourier_field(const Mesh& mesh, const FourierSpec& spec,
                              std::uint64_t seed);

/// Pointwise scale * Sigmoid(sharpness (x - 1/2)) + floor.
Eigen::VectorXd sigmoid_project(const Eigen::VectorXd& field, const SigmoidSpec& spec);

/// Gaussian random field with covariance exp(-|Xi-Xj|^2 / (2 l^2)) via dense
/// Cholesky; deterministic per seed.
Eigen::VectorXd grf_field(const Mesh& mesh, const GrfSpec& spec, std::uint64_t seed);

/// i.i.d. Gaussian components scaled by magnitude.
Eigen::VectorXd random_bc_vector(std::uint64_t seed, double magnitude, int components);

/// n samples with seeds seed+i. Persistence is handled by the io layer.
std::vector<Sample> make_dataset(const DatasetSpec& spec, int n, const Mesh& mesh,
                                 std::uint64_t seed);

}  // namespace ifol
