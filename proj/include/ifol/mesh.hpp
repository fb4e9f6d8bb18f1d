#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ifol/errors.hpp"

namespace ifol {

enum class ElementType { Quad4, Tri3, Tet4 };

int node_count(ElementType t);
int element_dim(ElementType t);
std::string to_string(ElementType t);
ElementType element_type_from_string(const std::string& s);

/// Spatial discretization: node coordinates, connectivity and named boundary
/// node sets (Dirichlet/Neumann surfaces). Immutable after construction.
struct Mesh {
  int dim = 2;
  ElementType elem_type = ElementType::Quad4;
  Eigen::MatrixXd coords;                        // dim x M
  Eigen::MatrixXi elements;                      // nodes_per_elem x n_el
  std::map<std::string, std::vector<int>> node_sets;

  int num_nodes() const { return static_cast<int>(coords.cols()); }
  int num_elements() const { return static_cast<int>(elements.cols()); }

  /// Axis-aligned bounding box, columns (lo, hi).
  Eigen::MatrixXd bounding_box() const;

  /// Throws ConfigError on out-of-range connectivity or duplicate set indices.
  void validate() const;

  /// FNV-1a over dims/coords/connectivity bytes; used to tie datasets and
  /// checkpoints to the mesh they were produced on.
  std::uint64_t content_hash() const;

  const std::vector<int>& node_set(const std::string& name) const;
};

struct QuadratureRule {
  Eigen::MatrixXd points;   // dim x n_int, parent coordinates
  Eigen::VectorXd weights;  // n_int
};

struct ShapeEval {
  Eigen::VectorXd N;        // nodes_per_elem
  Eigen::MatrixXd dN_dxi;   // dim x nodes_per_elem
};

struct GeomEval {
  Eigen::MatrixXd jac;      // dim x dim, dx_a/dxi_b
  double det_jac = 0.0;
  Eigen::MatrixXd gradN_x;  // dim x nodes_per_elem, physical-space gradients
};

/// Linear shape functions and parent-space gradients at xi.
/// Parent domains: Quad4 on [-1,1]^2, Tri3/Tet4 on the unit simplex.
ShapeEval shape_eval(ElementType t, const Eigen::VectorXd& xi);

/// Gauss rules exact for the bilinear/linear stiffness integrands:
/// Quad4 -> 2x2, Tri3 -> centroid, Tet4 -> 4-point.
const QuadratureRule& quadrature(ElementType t);

/// Jacobian, determinant and physical shape gradients for one element.
/// coords_e is dim x nodes_per_elem. Throws NumericalError for det <= 0.
GeomEval geometry_map(const Eigen::MatrixXd& coords_e, const ShapeEval& se,
                      int element_id = -1);

/// Structured grid over an axis-aligned box: Quad4 in 2D, Tet4 (six per cell)
/// in 3D. Boundary node sets: left/right (x), bottom/top (y), front/back (z).
Mesh generate_grid(int dim, const std::vector<int>& counts,
                   const Eigen::MatrixXd& bounds);

}  // namespace ifol
