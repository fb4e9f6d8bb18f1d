#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ifol/fem.hpp"
#include "ifol/mesh.hpp"
#include "ifol/tape.hpp"

namespace ifol {

struct FieldNetConfig {
  int in_dim = 2;
  int out_dim = 1;
  std::vector<int> hidden = {32, 32, 32};
  double omega0 = 30.0;
  int latent_dim = 64;

  void validate() const;
  int num_sine_layers() const { return static_cast<int>(hidden.size()); }
};

/// Synthesizer weights theta = (W_i, b_i) for every sine layer plus the
/// linear head, and modulator weights gamma = (V_i, modulation bias) for the
/// sine layers; the head is unmodulated.
struct FieldNetParams {
  std::vector<Eigen::MatrixXd> weights;    // sine layers then head
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::MatrixXd> mod_weights;   // h_i x latent_dim
  std::vector<Eigen::VectorXd> mod_biases;

  int num_scalars() const;
  Eigen::VectorXd to_flat() const;
  void from_flat(const Eigen::VectorXd& flat);
};

struct LatentCode {
  Eigen::VectorXd values;
};

/// Affine map of physical coordinates onto [-1,1]^d, stored with checkpoints
/// so evaluation meshes reuse the training normalization.
struct CoordMap {
  Eigen::VectorXd lo, hi;

  static CoordMap from_mesh(const Mesh& mesh);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_all(const Eigen::MatrixXd& coords) const;
};

/// SIREN initialization: first layer Uniform(-1/in_dim, 1/in_dim), deeper
/// layers Uniform(+-sqrt(6/fan_in)/omega0), zero biases; modulators use the
/// deep-layer rule with fan_in = latent_dim. Deterministic per seed.
FieldNetParams init_params(const FieldNetConfig& config, std::uint64_t seed);

/// Shift-modulated SIREN evaluated at a batch of (already normalized)
/// points [in_dim x P]. Each point is processed independently, so values do
/// not depend on how the batch is assembled.
Eigen::MatrixXd decode(const Eigen::MatrixXd& points_normalized, const LatentCode& l,
                       const FieldNetConfig& config, const FieldNetParams& params);

/// decode at all mesh nodes (through `map`), flattened node-major, then hard
/// Dirichlet overwrite.
Eigen::VectorXd nodal_field(const Mesh& mesh, const LatentCode& l,
                            const FieldNetConfig& config, const FieldNetParams& params,
                            const CoordMap& map, const DirichletSpec& dirichlet);

/// Recorded decode: same function on the tape, batched over points.
struct DecodeGraph {
  NodeId latent;                       // latent_dim x 1 leaf (Var)
  std::vector<NodeId> weight_leaves;   // W0,b0,...,WL,bL,V0,c0,... (Vars)
  NodeId out;                          // out_dim x P
  NodeId out_flat;                     // (out_dim * P) x 1, node-major
};

DecodeGraph build_decode_graph(Tape& tape, const Eigen::MatrixXd& points_normalized,
                               const FieldNetConfig& config);

/// Pushes parameter values into the graph's weight leaves.
void set_graph_params(Tape& tape, const DecodeGraph& graph, const FieldNetParams& params);

/// Collects leaf adjoints (or adjoint tangents) into a flat parameter vector.
Eigen::VectorXd collect_param_grads(const Tape& tape, const DecodeGraph& graph,
                                    const FieldNetParams& shape_like, bool tangent = false);

}  // namespace ifol
