#include "ifol/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ifol {

int node_count(ElementType t) {
  switch (t) {
    case ElementType::Quad4: return 4;
    case ElementType::Tri3: return 3;
    case ElementType::Tet4: return 4;
  }
  throw ConfigError("unknown element type");
}

int element_dim(ElementType t) { return t == ElementType::Tet4 ? 3 : 2; }

std::string to_string(ElementType t) {
  switch (t) {
    case ElementType::Quad4: return "quad4";
    case ElementType::Tri3: return "tri3";
    case ElementType::Tet4: return "tet4";
  }
  return "?";
}

ElementType element_type_from_string(const std::string& s) {
  if (s == "quad4") return ElementType::Quad4;
  if (s == "tri3") return ElementType::Tri3;
  if (s == "tet4") return ElementType::Tet4;
  throw ConfigError("unknown element type '" + s + "'");
}

Eigen::MatrixXd Mesh::bounding_box() const {
  Eigen::MatrixXd box(dim, 2);
  box.col(0) = coords.rowwise().minCoeff();
  box.col(1) = coords.rowwise().maxCoeff();
  return box;
}

void Mesh::validate() const {
  const int m = num_nodes();
  if (coords.rows() != dim) throw ConfigError("mesh: coords row count != dim");
  if (elements.rows() != node_count(elem_type))
    throw ConfigError("mesh: connectivity rows do not match element type");
  if (element_dim(elem_type) != dim)
    throw ConfigError("mesh: element type dimensionality does not match dim");
  for (int e = 0; e < num_elements(); ++e)
    for (int a = 0; a < elements.rows(); ++a)
      if (elements(a, e) < 0 || elements(a, e) >= m)
        throw ConfigError("mesh: connectivity index out of range in element " +
                          std::to_string(e));
  for (const auto& [name, ids] : node_sets) {
    std::set<int> seen;
    for (int id : ids) {
      if (id < 0 || id >= m)
        throw ConfigError("mesh: node set '" + name + "' index out of range");
      if (!seen.insert(id).second)
        throw ConfigError("mesh: node set '" + name + "' has duplicate index " +
                          std::to_string(id));
    }
  }
}

std::uint64_t Mesh::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  std::int64_t header[3] = {dim, static_cast<std::int64_t>(elem_type), num_nodes()};
  mix_bytes(header, sizeof(header));
  mix_bytes(coords.data(), sizeof(double) * coords.size());
  mix_bytes(elements.data(), sizeof(int) * elements.size());
  return h;
}

const std::vector<int>& Mesh::node_set(const std::string& name) const {
  auto it = node_sets.find(name);
  if (it == node_sets.end()) throw ConfigError("mesh: no node set named '" + name + "'");
  return it->second;
}

namespace {

void check_in_parent(ElementType t, const Eigen::VectorXd& xi) {
  constexpr double tol = 1e-12;
  if (t == ElementType::Quad4) {
    if (xi.size() != 2 || xi.cwiseAbs().maxCoeff() > 1.0 + tol)
      throw ConfigError("shape_eval: xi outside [-1,1]^2");
    return;
  }
  const int d = t == ElementType::Tri3 ? 2 : 3;
  if (xi.size() != d || xi.minCoeff() < -tol || xi.sum() > 1.0 + tol)
    throw ConfigError("shape_eval: xi outside the unit simplex");
}

}  // namespace

ShapeEval shape_eval(ElementType t, const Eigen::VectorXd& xi) {
  check_in_parent(t, xi);
  ShapeEval se;
  switch (t) {
    case ElementType::Quad4: {
      // Counter-clockwise corners (-1,-1), (1,-1), (1,1), (-1,1).
      const double x = xi[0], y = xi[1];
      se.N.resize(4);
      se.N << 0.25 * (1 - x) * (1 - y), 0.25 * (1 + x) * (1 - y),
          0.25 * (1 + x) * (1 + y), 0.25 * (1 - x) * (1 + y);
      se.dN_dxi.resize(2, 4);
      se.dN_dxi << -0.25 * (1 - y), 0.25 * (1 - y), 0.25 * (1 + y), -0.25 * (1 + y),
          -0.25 * (1 - x), -0.25 * (1 + x), 0.25 * (1 + x), 0.25 * (1 - x);
      break;
    }
    case ElementType::Tri3: {
      const double x = xi[0], y = xi[1];
      se.N.resize(3);
      se.N << 1 - x - y, x, y;
      se.dN_dxi.resize(2, 3);
      se.dN_dxi << -1, 1, 0,
          -1, 0, 1;
      break;
    }
    case ElementType::Tet4: {
      const double x = xi[0], y = xi[1], z = xi[2];
      se.N.resize(4);
      se.N << 1 - x - y - z, x, y, z;
      se.dN_dxi.resize(3, 4);
      se.dN_dxi << -1, 1, 0, 0,
          -1, 0, 1, 0,
          -1, 0, 0, 1;
      break;
    }
  }
  return se;
}

const QuadratureRule& quadrature(ElementType t) {
  static const QuadratureRule quad4 = [] {
    QuadratureRule r;
    const double g = 1.0 / std::sqrt(3.0);
    r.points.resize(2, 4);
    r.points << -g, g, g, -g,
        -g, -g, g, g;
    r.weights = Eigen::VectorXd::Ones(4);
    return r;
  }();
  static const QuadratureRule tri3 = [] {
    QuadratureRule r;
    r.points.resize(2, 1);
    r.points << 1.0 / 3.0, 1.0 / 3.0;
    r.weights = Eigen::VectorXd::Constant(1, 0.5);
    return r;
  }();
  static const QuadratureRule tet4 = [] {
    QuadratureRule r;
    const double a = (5.0 + 3.0 * std::sqrt(5.0)) / 20.0;
    const double b = (5.0 - std::sqrt(5.0)) / 20.0;
    r.points.resize(3, 4);
    r.points << a, b, b, b,
        b, a, b, b,
        b, b, a, b;
    r.weights = Eigen::VectorXd::Constant(4, 1.0 / 24.0);
    return r;
  }();
  switch (t) {
    case ElementType::Quad4: return quad4;
    case ElementType::Tri3: return tri3;
    case ElementType::Tet4: return tet4;
  }
  throw ConfigError("unknown element type");
}

GeomEval geometry_map(const Eigen::MatrixXd& coords_e, const ShapeEval& se,
                      int element_id) {
  GeomEval ge;
  ge.jac = coords_e * se.dN_dxi.transpose();  // jac(a,b) = dx_a/dxi_b
  ge.det_jac = ge.jac.determinant();
  if (!(ge.det_jac > 0.0)) {
    std::string where = element_id >= 0 ? " in element " + std::to_string(element_id) : "";
    throw NumericalError("inverted element: non-positive Jacobian determinant" + where);
  }
  ge.gradN_x = ge.jac.transpose().partialPivLu().solve(se.dN_dxi);
  return ge;
}

namespace {

// Kuhn subdivision of a hex cell into six tetrahedra sharing the main
// diagonal v0-v7; all have positive volume for an axis-aligned cell.
constexpr int kHexTets[6][4] = {
    {0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
    {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7},
};

}  // namespace

Mesh generate_grid(int dim, const std::vector<int>& counts,
                   const Eigen::MatrixXd& bounds) {
  if (dim != 2 && dim != 3) throw ConfigError("generate_grid: dim must be 2 or 3");
  if (static_cast<int>(counts.size()) != dim)
    throw ConfigError("generate_grid: counts size must equal dim");
  for (int c : counts)
    if (c < 2) throw ConfigError("generate_grid: need at least 2 nodes per axis");
  if (bounds.rows() != dim || bounds.cols() != 2)
    throw ConfigError("generate_grid: bounds must be dim x 2");

  Mesh mesh;
  mesh.dim = dim;
  const int nx = counts[0], ny = counts[1], nz = dim == 3 ? counts[2] : 1;
  const int m = nx * ny * nz;
  mesh.coords.resize(dim, m);

  std::vector<double> step(dim);
  for (int a = 0; a < dim; ++a) step[a] = (bounds(a, 1) - bounds(a, 0)) / (counts[a] - 1);

  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int id = (k * ny + j) * nx + i;
        mesh.coords(0, id) = bounds(0, 0) + i * step[0];
        mesh.coords(1, id) = bounds(1, 0) + j * step[1];
        if (dim == 3) mesh.coords(2, id) = bounds(2, 0) + k * step[2];
      }

  auto add_set = [&mesh](const std::string& name, std::vector<int> ids) {
    mesh.node_sets[name] = std::move(ids);
  };
  std::vector<int> left, right, bottom, top, front, back;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const int id = (k * ny + j) * nx + i;
        if (i == 0) left.push_back(id);
        if (i == nx - 1) right.push_back(id);
        if (j == 0) bottom.push_back(id);
        if (j == ny - 1) top.push_back(id);
        if (dim == 3 && k == 0) front.push_back(id);
        if (dim == 3 && k == nz - 1) back.push_back(id);
      }
  add_set("left", std::move(left));
  add_set("right", std::move(right));
  add_set("bottom", std::move(bottom));
  add_set("top", std::move(top));
  if (dim == 3) {
    add_set("front", std::move(front));
    add_set("back", std::move(back));
  }

  if (dim == 2) {
    mesh.elem_type = ElementType::Quad4;
    mesh.elements.resize(4, (nx - 1) * (ny - 1));
    int e = 0;
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i, ++e) {
        const int n0 = j * nx + i;
        mesh.elements.col(e) << n0, n0 + 1, n0 + 1 + nx, n0 + nx;
      }
  } else {
    mesh.elem_type = ElementType::Tet4;
    mesh.elements.resize(4, 6 * (nx - 1) * (ny - 1) * (nz - 1));
    int e = 0;
    for (int k = 0; k + 1 < nz; ++k)
      for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
          int corner[8];
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                corner[dz * 4 + dy * 2 + dx] = ((k + dz) * ny + (j + dy)) * nx + (i + dx);
          for (const auto& tet : kHexTets) {
            for (int a = 0; a < 4; ++a) mesh.elements(a, e) = corner[tet[a]];
            ++e;
          }
        }
  }

  // Orientation guard: flip any tet that came out negative.
  if (mesh.elem_type == ElementType::Tet4) {
    Eigen::VectorXd center = Eigen::VectorXd::Constant(3, 0.25);
    const ShapeEval se = shape_eval(ElementType::Tet4, center);
    for (int e = 0; e < mesh.num_elements(); ++e) {
      Eigen::MatrixXd ce(3, 4);
      for (int a = 0; a < 4; ++a) ce.col(a) = mesh.coords.col(mesh.elements(a, e));
      if ((ce * se.dN_dxi.transpose()).determinant() <= 0.0)
        std::swap(mesh.elements(2, e), mesh.elements(3, e));
    }
  }

  mesh.validate();
  return mesh;
}

}  // namespace ifol
