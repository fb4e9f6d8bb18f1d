#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ifol/fem.hpp"
#include "ifol/field_net.hpp"
#include "ifol/learning.hpp"
#include "ifol/mesh.hpp"
#include "ifol/sampling.hpp"

namespace ifol {

using Json = nlohmann::json;

// --- mesh files -------------------------------------------------------------

Json mesh_to_json(const Mesh& mesh);
Mesh mesh_from_json(const Json& j);
void save_mesh(const std::string& path, const Mesh& mesh);
Mesh load_mesh(const std::string& path);

// --- datasets (JSON lines, one sample per line, seed provenance) ------------

void save_dataset(const std::string& path, const std::vector<Sample>& samples,
                  const Mesh& mesh, DatasetKind kind);
std::vector<Sample> load_dataset(const std::string& path, const Mesh& mesh);

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = 1;
  FieldNetConfig net;
  FieldNetParams params;
  CoordMap coord_map;
  TrainConfig train;
  int epoch = 0;
  std::uint64_t mesh_hash = 0;
  std::string rng_state;
};

/// Versioned binary: JSON header plus raw little-endian doubles. Round-trip
/// is bit-exact.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// --- field export ------------------------------------------------------------

/// Legacy ASCII VTK unstructured grid with point data. Deterministic output,
/// no timestamps.
void write_vtk(const std::string& path, const Mesh& mesh,
               const std::map<std::string, Eigen::VectorXd>& point_fields,
               int n_components);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

// --- run configuration --------------------------------------------------------

struct MeshConfig {
  bool generate = true;
  int dim = 2;
  std::vector<int> counts = {21, 21};
  Eigen::MatrixXd bounds;  // dim x 2
  std::string file;        // when generate == false

  Mesh build() const;
};

struct PathsConfig {
  std::string dataset = "out/dataset.jsonl";
  std::string checkpoint = "out/model.ckpt";
  std::string out_dir = "out";
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  MeshConfig mesh;
  Json problem;  // validated and expanded against the mesh by to_problem()
  BoundarySpec boundary;
  FieldNetConfig net;  // in_dim/out_dim filled from mesh/problem
  TrainConfig train;
  DatasetSpec sampling;
  int sample_count = 100;
  /// Extra transient samples taken from FEM-evolved states of the base
  /// fields (label-free coverage of the states a rollout visits).
  int rollout_augment = 0;
  PathsConfig paths;

  PdeProblem to_problem(const Mesh& mesh) const;
};

/// Parses and cross-validates a run configuration; error messages carry the
/// offending field path. Env/CLI overrides are applied by the caller.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::string& path);
Json run_config_to_json(const RunConfig& cfg);

}  // namespace ifol
