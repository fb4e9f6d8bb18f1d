#include "ifol/field_net.hpp"

#include <cmath>

#include "ifol/rng.hpp"
#include "ifol/simd_math.hpp"

namespace ifol {

void FieldNetConfig::validate() const {
  if (in_dim < 1 || out_dim < 1 || latent_dim < 1)
    throw ConfigError("net: dimensions must be >= 1");
  if (hidden.empty()) throw ConfigError("net: need at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw ConfigError("net: hidden widths must be >= 1");
  if (!(omega0 > 0)) throw ConfigError("net: omega0 must be positive");
}

int FieldNetParams::num_scalars() const {
  int n = 0;
  for (const auto& w : weights) n += static_cast<int>(w.size());
  for (const auto& b : biases) n += static_cast<int>(b.size());
  for (const auto& v : mod_weights) n += static_cast<int>(v.size());
  for (const auto& c : mod_biases) n += static_cast<int>(c.size());
  return n;
}

Eigen::VectorXd FieldNetParams::to_flat() const {
  Eigen::VectorXd flat(num_scalars());
  int at = 0;
  auto put = [&](const double* p, int n) {
    std::copy(p, p + n, flat.data() + at);
    at += n;
  };
  for (size_t i = 0; i < weights.size(); ++i) {
    put(weights[i].data(), static_cast<int>(weights[i].size()));
    put(biases[i].data(), static_cast<int>(biases[i].size()));
  }
  for (size_t i = 0; i < mod_weights.size(); ++i) {
    put(mod_weights[i].data(), static_cast<int>(mod_weights[i].size()));
    put(mod_biases[i].data(), static_cast<int>(mod_biases[i].size()));
  }
  return flat;
}

void FieldNetParams::from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() != num_scalars())
    throw ConfigError("params: flat vector length mismatch");
  int at = 0;
  auto take = [&](double* p, int n) {
    std::copy(flat.data() + at, flat.data() + at + n, p);
    at += n;
  };
  for (size_t i = 0; i < weights.size(); ++i) {
    take(weights[i].data(), static_cast<int>(weights[i].size()));
    take(biases[i].data(), static_cast<int>(biases[i].size()));
  }
  for (size_t i = 0; i < mod_weights.size(); ++i) {
    take(mod_weights[i].data(), static_cast<int>(mod_weights[i].size()));
    take(mod_biases[i].data(), static_cast<int>(mod_biases[i].size()));
  }
}

CoordMap CoordMap::from_mesh(const Mesh& mesh) {
  CoordMap m;
  Eigen::MatrixXd box = mesh.bounding_box();
  m.lo = box.col(0);
  m.hi = box.col(1);
  return m;
}

Eigen::VectorXd CoordMap::apply(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(x.size());
  for (int a = 0; a < x.size(); ++a) {
    const double span = hi[a] - lo[a];
    out[a] = span > 0 ? 2.0 * (x[a] - lo[a]) / span - 1.0 : 0.0;
  }
  return out;
}

Eigen::MatrixXd CoordMap::apply_all(const Eigen::MatrixXd& coords) const {
  Eigen::MatrixXd out(coords.rows(), coords.cols());
  for (int j = 0; j < coords.cols(); ++j) out.col(j) = apply(coords.col(j));
  return out;
}

FieldNetParams init_params(const FieldNetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  FieldNetParams p;
  const int nl = config.num_sine_layers();

  auto fill_uniform = [&rng](Eigen::MatrixXd& m, double bound) {
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };

  int prev = config.in_dim;
  for (int i = 0; i <= nl; ++i) {
    const int width = i < nl ? config.hidden[i] : config.out_dim;
    Eigen::MatrixXd w(width, prev);
    const double bound = i == 0 ? 1.0 / config.in_dim
                                : std::sqrt(6.0 / prev) / config.omega0;
    fill_uniform(w, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(width));
    prev = width;
  }
  for (int i = 0; i < nl; ++i) {
    Eigen::MatrixXd v(config.hidden[i], config.latent_dim);
    fill_uniform(v, std::sqrt(6.0 / config.latent_dim) / config.omega0);
    p.mod_weights.push_back(std::move(v));
    p.mod_biases.push_back(Eigen::VectorXd::Zero(config.hidden[i]));
  }
  return p;
}

Eigen::MatrixXd decode(const Eigen::MatrixXd& points, const LatentCode& l,
                       const FieldNetConfig& config, const FieldNetParams& params) {
  if (points.rows() != config.in_dim)
    throw ConfigError("decode: point dimension does not match in_dim");
  if (l.values.size() != config.latent_dim)
    throw ConfigError("decode: latent length does not match latent_dim");
  const int nl = config.num_sine_layers();
  const int npts = static_cast<int>(points.cols());

  // FiLM shifts depend only on the latent code.
  std::vector<Eigen::VectorXd> shift(nl);
  for (int i = 0; i < nl; ++i)
    shift[i] = params.mod_weights[i] * l.values + params.mod_biases[i];

  Eigen::MatrixXd out(config.out_dim, npts);
  // Per-point evaluation keeps results independent of the batch layout,
  // which the zero-shot super-resolution checks rely on bit-for-bit.
  Eigen::VectorXd eta, pre;
  for (int j = 0; j < npts; ++j) {
    eta = points.col(j);
    for (int i = 0; i < nl; ++i) {
      pre = params.weights[i] * eta;
      pre += params.biases[i] + shift[i];
      pre *= config.omega0;
      eta.resize(pre.size());
      vecmath::sin_only(pre.data(), eta.data(), static_cast<size_t>(pre.size()));
    }
    out.col(j) = params.weights[nl] * eta + params.biases[nl];
  }
  return out;
}

Eigen::VectorXd nodal_field(const Mesh& mesh, const LatentCode& l,
                            const FieldNetConfig& config, const FieldNetParams& params,
                            const CoordMap& map, const DirichletSpec& dirichlet) {
  if (mesh.dim != config.in_dim)
    throw ConfigError("nodal_field: mesh dimension does not match in_dim");
  Eigen::MatrixXd vals = decode(map.apply_all(mesh.coords), l, config, params);
  Eigen::VectorXd flat =
      Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
  return apply_dirichlet(std::move(flat), dirichlet, config.out_dim);
}

DecodeGraph build_decode_graph(Tape& tape, const Eigen::MatrixXd& points,
                               const FieldNetConfig& config) {
  config.validate();
  if (points.rows() != config.in_dim)
    throw ConfigError("decode graph: point dimension does not match in_dim");
  const int nl = config.num_sine_layers();
  const int npts = static_cast<int>(points.cols());

  DecodeGraph g;
  g.latent = tape.var(config.latent_dim, 1, "latent");

  std::vector<NodeId> w(nl + 1), b(nl + 1), v(nl), mb(nl);
  int prev = config.in_dim;
  for (int i = 0; i <= nl; ++i) {
    const int width = i < nl ? config.hidden[i] : config.out_dim;
    w[i] = tape.var(width, prev, "W" + std::to_string(i));
    b[i] = tape.var(width, 1, "b" + std::to_string(i));
    prev = width;
  }
  for (int i = 0; i < nl; ++i) {
    v[i] = tape.var(config.hidden[i], config.latent_dim, "V" + std::to_string(i));
    mb[i] = tape.var(config.hidden[i], 1, "c" + std::to_string(i));
  }

  NodeId eta = tape.constant(Mat(points.array()), "coords");
  for (int i = 0; i < nl; ++i) {
    NodeId phi = tape.add(tape.matmul(v[i], g.latent), mb[i]);
    NodeId shift = tape.add(b[i], phi);
    eta = tape.siren_act(tape.matmul(w[i], eta), shift, config.omega0);
  }
  g.out = tape.add_colvec(tape.matmul(w[nl], eta), b[nl]);
  g.out_flat = tape.reshape(g.out, config.out_dim * npts, 1);

  for (int i = 0; i <= nl; ++i) {
    g.weight_leaves.push_back(w[i]);
    g.weight_leaves.push_back(b[i]);
  }
  for (int i = 0; i < nl; ++i) {
    g.weight_leaves.push_back(v[i]);
    g.weight_leaves.push_back(mb[i]);
  }
  return g;
}

void set_graph_params(Tape& tape, const DecodeGraph& graph, const FieldNetParams& params) {
  size_t at = 0;
  auto push = [&](const Eigen::MatrixXd& m) {
    tape.set_value(graph.weight_leaves[at++], m.array());
  };
  for (size_t i = 0; i < params.weights.size(); ++i) {
    push(params.weights[i]);
    push(params.biases[i]);
  }
  for (size_t i = 0; i < params.mod_weights.size(); ++i) {
    push(params.mod_weights[i]);
    push(params.mod_biases[i]);
  }
}

Eigen::VectorXd collect_param_grads(const Tape& tape, const DecodeGraph& graph,
                                    const FieldNetParams& shape_like, bool tangent) {
  Eigen::VectorXd flat(shape_like.num_scalars());
  int at = 0;
  for (NodeId leaf : graph.weight_leaves) {
    const Mat& g = tangent ? tape.adjoint_tangent(leaf) : tape.adjoint(leaf);
    std::copy(g.data(), g.data() + g.size(), flat.data() + at);
    at += static_cast<int>(g.size());
  }
  return flat;
}

}  // namespace ifol
