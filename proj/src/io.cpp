#include "ifol/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ifol {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Field access with path-carrying errors.
const Json& at(const Json& j, const std::string& key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("config: missing field '" + path + "'");
  return *it;
}

template <class T>
T get_or(const Json& j, const std::string& key, const std::string& path, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: field '" + path + "' has the wrong type");
  }
}

template <class T>
T get_req(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = at(j, key, path);
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: field '" + path + "' has the wrong type");
  }
}

Json vec_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const Json& a, const std::string& path) {
  if (!a.is_array()) throw ConfigError("config: '" + path + "' must be an array");
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

}  // namespace

// --- mesh -------------------------------------------------------------------

Json mesh_to_json(const Mesh& mesh) {
  Json j;
  j["dim"] = mesh.dim;
  j["elem_type"] = to_string(mesh.elem_type);
  Json coords = Json::array();
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    Json c = Json::array();
    for (int a = 0; a < mesh.dim; ++a) c.push_back(mesh.coords(a, n));
    coords.push_back(std::move(c));
  }
  j["coords"] = std::move(coords);
  Json elems = Json::array();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    Json el = Json::array();
    for (int a = 0; a < mesh.elements.rows(); ++a) el.push_back(mesh.elements(a, e));
    elems.push_back(std::move(el));
  }
  j["elements"] = std::move(elems);
  Json sets = Json::object();
  for (const auto& [name, ids] : mesh.node_sets) sets[name] = ids;
  j["node_sets"] = std::move(sets);
  return j;
}

Mesh mesh_from_json(const Json& j) {
  Mesh mesh;
  mesh.dim = get_req<int>(j, "dim", "mesh.dim");
  mesh.elem_type = element_type_from_string(get_req<std::string>(j, "elem_type", "mesh.elem_type"));
  const Json& coords = at(j, "coords", "mesh.coords");
  mesh.coords.resize(mesh.dim, coords.size());
  for (size_t n = 0; n < coords.size(); ++n)
    for (int a = 0; a < mesh.dim; ++a) mesh.coords(a, n) = coords[n][a].get<double>();
  const Json& elems = at(j, "elements", "mesh.elements");
  const int nn = node_count(mesh.elem_type);
  mesh.elements.resize(nn, elems.size());
  for (size_t e = 0; e < elems.size(); ++e)
    for (int a = 0; a < nn; ++a) mesh.elements(a, e) = elems[e][a].get<int>();
  for (const auto& [name, ids] : at(j, "node_sets", "mesh.node_sets").items())
    mesh.node_sets[name] = ids.get<std::vector<int>>();
  mesh.validate();
  return mesh;
}

void save_mesh(const std::string& path, const Mesh& mesh) {
  write_text_file(path, mesh_to_json(mesh).dump());
}

Mesh load_mesh(const std::string& path) { return mesh_from_json(load_json_file(path)); }

// --- datasets -----------------------------------------------------------------

void save_dataset(const std::string& path, const std::vector<Sample>& samples,
                  const Mesh& mesh, DatasetKind kind) {
  std::ostringstream out;
  Json head;
  head["format"] = "ifol-dataset";
  head["version"] = 1;
  head["kind"] = to_string(kind);
  head["mesh_hash"] = mesh.content_hash();
  head["n"] = samples.size();
  out << head.dump() << "\n";
  for (const Sample& s : samples) {
    Json line;
    line["seed"] = s.seed;
    if (s.c.size()) line["c"] = vec_to_json(s.c);
    if (s.u_prev) line["u_prev"] = vec_to_json(*s.u_prev);
    if (s.bc) line["bc"] = vec_to_json(*s.bc);
    out << line.dump() << "\n";
  }
  write_text_file(path, out.str());
}

std::vector<Sample> load_dataset(const std::string& path, const Mesh& mesh) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset '" + path + "' is empty");
  Json head = Json::parse(line, nullptr, false);
  if (head.is_discarded() || get_or<std::string>(head, "format", "dataset.format", "") !=
                                 "ifol-dataset")
    throw IoError("'" + path + "' is not an ifol dataset");
  const std::uint64_t want_hash = get_req<std::uint64_t>(head, "mesh_hash", "dataset.mesh_hash");
  if (want_hash != mesh.content_hash())
    throw ConfigError("dataset mesh hash does not match the run mesh");
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    Sample s;
    s.seed = get_req<std::uint64_t>(j, "seed", "dataset.sample.seed");
    if (j.contains("c")) s.c = vec_from_json(j["c"], "dataset.sample.c");
    if (j.contains("u_prev")) s.u_prev = vec_from_json(j["u_prev"], "dataset.sample.u_prev");
    if (j.contains("bc")) s.bc = vec_from_json(j["bc"], "dataset.sample.bc");
    samples.push_back(std::move(s));
  }
  return samples;
}

// --- checkpoints ----------------------------------------------------------------

namespace {

Json train_to_json(const TrainConfig& t) {
  Json j;
  j["k_encode"] = t.k_encode;
  j["alpha"] = t.alpha;
  j["lr_start"] = t.lr_start;
  j["lr_end"] = t.lr_end;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["grad_norm"] = t.grad_norm;
  j["first_order"] = t.first_order;
  j["detach_residual"] = t.detach_residual;
  j["seed"] = t.seed;
  j["checkpoint_every"] = t.checkpoint_every;
  return j;
}

TrainConfig train_from_json(const Json& j, const std::string& path) {
  TrainConfig t;
  t.k_encode = get_or(j, "k_encode", path + ".k_encode", t.k_encode);
  t.alpha = get_or(j, "alpha", path + ".alpha", t.alpha);
  t.lr_start = get_or(j, "lr_start", path + ".lr_start", t.lr_start);
  t.lr_end = get_or(j, "lr_end", path + ".lr_end", t.lr_end);
  t.epochs = get_or(j, "epochs", path + ".epochs", t.epochs);
  t.batch_size = get_or(j, "batch_size", path + ".batch_size", t.batch_size);
  t.grad_norm = get_or(j, "grad_norm", path + ".grad_norm", t.grad_norm);
  t.first_order = get_or(j, "first_order", path + ".first_order", t.first_order);
  t.detach_residual =
      get_or(j, "detach_residual", path + ".detach_residual", t.detach_residual);
  t.seed = get_or<std::uint64_t>(j, "seed", path + ".seed", t.seed);
  t.checkpoint_every =
      get_or(j, "checkpoint_every", path + ".checkpoint_every", t.checkpoint_every);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Json head;
  head["version"] = ckpt.version;
  head["net"] = {{"in_dim", ckpt.net.in_dim},
                 {"out_dim", ckpt.net.out_dim},
                 {"hidden", ckpt.net.hidden},
                 {"omega0", ckpt.net.omega0},
                 {"latent_dim", ckpt.net.latent_dim}};
  head["coord_map"] = {{"lo", vec_to_json(ckpt.coord_map.lo)},
                       {"hi", vec_to_json(ckpt.coord_map.hi)}};
  head["train"] = train_to_json(ckpt.train);
  head["epoch"] = ckpt.epoch;
  head["mesh_hash"] = ckpt.mesh_hash;
  head["rng_state"] = ckpt.rng_state;
  const std::string header = head.dump();

  Eigen::VectorXd flat = ckpt.params.to_flat();
  std::string blob;
  blob.reserve(16 + header.size() + sizeof(double) * flat.size());
  blob += "IFOLCKPT";
  std::uint32_t hlen = static_cast<std::uint32_t>(header.size());
  std::uint64_t plen = static_cast<std::uint64_t>(flat.size());
  blob.append(reinterpret_cast<const char*>(&hlen), 4);
  blob.append(reinterpret_cast<const char*>(&plen), 8);
  blob += header;
  blob.append(reinterpret_cast<const char*>(flat.data()), sizeof(double) * flat.size());
  write_text_file(path, blob);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 20 || blob.compare(0, 8, "IFOLCKPT") != 0)
    throw IoError("'" + path + "' is not an ifol checkpoint");
  std::uint32_t hlen;
  std::uint64_t plen;
  std::memcpy(&hlen, blob.data() + 8, 4);
  std::memcpy(&plen, blob.data() + 12, 8);
  if (blob.size() < 20 + hlen + sizeof(double) * plen)
    throw IoError("checkpoint '" + path + "' is truncated");
  Json head = Json::parse(blob.substr(20, hlen));

  Checkpoint ckpt;
  ckpt.version = get_req<std::uint32_t>(head, "version", "checkpoint.version");
  if (ckpt.version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  const Json& net = at(head, "net", "checkpoint.net");
  ckpt.net.in_dim = get_req<int>(net, "in_dim", "checkpoint.net.in_dim");
  ckpt.net.out_dim = get_req<int>(net, "out_dim", "checkpoint.net.out_dim");
  ckpt.net.hidden = get_req<std::vector<int>>(net, "hidden", "checkpoint.net.hidden");
  ckpt.net.omega0 = get_req<double>(net, "omega0", "checkpoint.net.omega0");
  ckpt.net.latent_dim = get_req<int>(net, "latent_dim", "checkpoint.net.latent_dim");
  const Json& cm = at(head, "coord_map", "checkpoint.coord_map");
  ckpt.coord_map.lo = vec_from_json(cm["lo"], "checkpoint.coord_map.lo");
  ckpt.coord_map.hi = vec_from_json(cm["hi"], "checkpoint.coord_map.hi");
  ckpt.train = train_from_json(at(head, "train", "checkpoint.train"), "checkpoint.train");
  ckpt.epoch = get_req<int>(head, "epoch", "checkpoint.epoch");
  ckpt.mesh_hash = get_req<std::uint64_t>(head, "mesh_hash", "checkpoint.mesh_hash");
  ckpt.rng_state = get_or<std::string>(head, "rng_state", "checkpoint.rng_state", "");

  // Rebuild parameter shapes from the config, then load the raw doubles.
  ckpt.params = init_params(ckpt.net, 0);
  if (static_cast<std::uint64_t>(ckpt.params.num_scalars()) != plen)
    throw IoError("checkpoint parameter count does not match its net config");
  Eigen::VectorXd flat(plen);
  std::memcpy(flat.data(), blob.data() + 20 + hlen, sizeof(double) * plen);
  ckpt.params.from_flat(flat);
  return ckpt;
}

// --- field export ----------------------------------------------------------------

void write_vtk(const std::string& path, const Mesh& mesh,
               const std::map<std::string, Eigen::VectorXd>& point_fields,
               int n_components) {
  std::ostringstream out;
  out.precision(17);
  out << "# vtk DataFile Version 3.0\nifol field export\nASCII\n";
  out << "DATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.num_nodes() << " double\n";
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    for (int a = 0; a < 3; ++a)
      out << (a < mesh.dim ? mesh.coords(a, n) : 0.0) << (a < 2 ? ' ' : '\n');
  }
  const int nn = node_count(mesh.elem_type);
  out << "CELLS " << mesh.num_elements() << " " << mesh.num_elements() * (nn + 1) << "\n";
  for (int e = 0; e < mesh.num_elements(); ++e) {
    out << nn;
    for (int a = 0; a < nn; ++a) out << ' ' << mesh.elements(a, e);
    out << '\n';
  }
  int vtk_type = mesh.elem_type == ElementType::Quad4 ? 9
                 : mesh.elem_type == ElementType::Tri3 ? 5
                                                        : 10;
  out << "CELL_TYPES " << mesh.num_elements() << "\n";
  for (int e = 0; e < mesh.num_elements(); ++e) out << vtk_type << '\n';
  out << "POINT_DATA " << mesh.num_nodes() << "\n";
  for (const auto& [name, field] : point_fields) {
    if (field.size() == mesh.num_nodes()) {
      out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (int n = 0; n < mesh.num_nodes(); ++n) out << field[n] << '\n';
    } else if (field.size() == mesh.num_nodes() * n_components) {
      out << "VECTORS " << name << " double\n";
      for (int n = 0; n < mesh.num_nodes(); ++n) {
        for (int a = 0; a < 3; ++a)
          out << (a < n_components ? field[n * n_components + a] : 0.0)
              << (a < 2 ? ' ' : '\n');
      }
    } else {
      throw IoError("write_vtk: field '" + name + "' has an incompatible length");
    }
  }
  write_text_file(path, out.str());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  out.precision(17);
  for (size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? ',' : '\n');
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? ',' : '\n');
  }
  write_text_file(path, out.str());
}

// --- run configuration --------------------------------------------------------------

Mesh MeshConfig::build() const {
  if (generate) return generate_grid(dim, counts, bounds);
  return load_mesh(file);
}

PdeProblem RunConfig::to_problem(const Mesh& mesh) const {
  const Json& j = problem;
  const std::string type = get_req<std::string>(j, "type", "problem.type");
  const int m = mesh.num_nodes();
  auto nodal_field = [&](const char* key, double fallback) -> Eigen::VectorXd {
    auto it = j.find(key);
    if (it == j.end()) return Eigen::VectorXd::Constant(m, fallback);
    if (it->is_number()) return Eigen::VectorXd::Constant(m, it->get<double>());
    Eigen::VectorXd v = vec_from_json(*it, std::string("problem.") + key);
    if (v.size() != m)
      throw ConfigError(std::string("config: 'problem.") + key +
                        "' length does not match the mesh");
    return v;
  };

  PdeProblem out;
  if (type == "stationary_diffusion") {
    StationaryDiffusion p;
    p.k0_field = nodal_field("k0", 1.0);
    p.quartic_coeff = get_or(j, "quartic_coeff", "problem.quartic_coeff", 2.0);
    p.source = get_or(j, "source", "problem.source", 0.0);
    out = p;
  } else if (type == "transient_thermal") {
    TransientThermal p;
    p.k0_field = nodal_field("k0", 1.0);
    p.alpha = get_or(j, "alpha", "problem.alpha", 0.0);
    p.rho_cp = get_or(j, "rho_cp", "problem.rho_cp", 1.0);
    p.dt = get_req<double>(j, "dt", "problem.dt");
    p.source = get_or(j, "source", "problem.source", 0.0);
    out = p;
  } else if (type == "allen_cahn") {
    AllenCahn p;
    p.eps = get_req<double>(j, "eps", "problem.eps");
    p.dt = get_req<double>(j, "dt", "problem.dt");
    out = p;
  } else if (type == "linear_elasticity") {
    LinearElasticity p;
    p.youngs = get_or(j, "youngs", "problem.youngs", 1.0);
    p.poisson = get_or(j, "poisson", "problem.poisson", 0.3);
    p.elasticity_field = nodal_field("multiplier", 1.0);
    out = p;
  } else if (type == "hyperelastic") {
    Hyperelastic p;
    p.mu_field = nodal_field("mu", 1.0);
    p.kappa_field = nodal_field("kappa", 2.0);
    out = p;
  } else {
    throw ConfigError("config: unknown problem.type '" + type + "'");
  }
  validate_problem(out, mesh);
  return out;
}

RunConfig parse_run_config(const Json& j) {
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", "seed", 0);
  cfg.threads = get_or(j, "threads", "threads", 1);

  const Json& jm = at(j, "mesh", "mesh");
  if (jm.contains("file")) {
    cfg.mesh.generate = false;
    cfg.mesh.file = get_req<std::string>(jm, "file", "mesh.file");
  } else {
    const Json& jg = at(jm, "generate", "mesh.generate");
    cfg.mesh.generate = true;
    cfg.mesh.dim = get_req<int>(jg, "dim", "mesh.generate.dim");
    cfg.mesh.counts = get_req<std::vector<int>>(jg, "counts", "mesh.generate.counts");
    const Json& jb = at(jg, "bounds", "mesh.generate.bounds");
    cfg.mesh.bounds.resize(cfg.mesh.dim, 2);
    if (static_cast<int>(jb.size()) != cfg.mesh.dim)
      throw ConfigError("config: 'mesh.generate.bounds' must have dim rows");
    for (int a = 0; a < cfg.mesh.dim; ++a) {
      cfg.mesh.bounds(a, 0) = jb[a][0].get<double>();
      cfg.mesh.bounds(a, 1) = jb[a][1].get<double>();
    }
  }

  cfg.problem = at(j, "problem", "problem");
  if (!cfg.problem.contains("type"))
    throw ConfigError("config: missing field 'problem.type'");

  if (j.contains("boundary")) {
    const Json& jb = j["boundary"];
    for (const Json& e : get_or(jb, "dirichlet", "boundary.dirichlet", Json::array())) {
      BoundaryEntry be;
      be.set = get_req<std::string>(e, "set", "boundary.dirichlet[].set");
      be.component = get_or(e, "component", "boundary.dirichlet[].component", 0);
      be.value = get_or(e, "value", "boundary.dirichlet[].value", 0.0);
      cfg.boundary.dirichlet.push_back(std::move(be));
    }
    cfg.boundary.sample_dirichlet_set = get_or<std::string>(
        jb, "sample_dirichlet_set", "boundary.sample_dirichlet_set", "");
    for (const Json& e : get_or(jb, "neumann", "boundary.neumann", Json::array())) {
      BoundaryEntry be;
      be.set = get_req<std::string>(e, "set", "boundary.neumann[].set");
      be.component = get_or(e, "component", "boundary.neumann[].component", 0);
      be.value = get_or(e, "value", "boundary.neumann[].value", 0.0);
      cfg.boundary.neumann.push_back(std::move(be));
    }
  }

  const Json& jn = at(j, "net", "net");
  cfg.net.hidden = get_req<std::vector<int>>(jn, "hidden", "net.hidden");
  cfg.net.omega0 = get_or(jn, "omega0", "net.omega0", 30.0);
  cfg.net.latent_dim = get_req<int>(jn, "latent_dim", "net.latent_dim");

  if (j.contains("train")) cfg.train = train_from_json(j["train"], "train");
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;

  if (j.contains("sampling")) {
    const Json& js = j["sampling"];
    cfg.sampling.kind = dataset_kind_from_string(
        get_or<std::string>(js, "kind", "sampling.kind", "fourier_sigmoid"));
    cfg.sample_count = get_or(js, "n", "sampling.n", 100);
    cfg.rollout_augment = get_or(js, "rollout_augment", "sampling.rollout_augment", 0);
    if (js.contains("fourier")) {
      const Json& jf = js["fourier"];
      cfg.sampling.fourier.freq_x =
          get_or(jf, "freq_x", "sampling.fourier.freq_x", cfg.sampling.fourier.freq_x);
      cfg.sampling.fourier.freq_y =
          get_or(jf, "freq_y", "sampling.fourier.freq_y", cfg.sampling.fourier.freq_y);
      cfg.sampling.fourier.freq_z =
          get_or(jf, "freq_z", "sampling.fourier.freq_z", cfg.sampling.fourier.freq_z);
      if (jf.contains("coeff")) {
        cfg.sampling.fourier.coeff_lo = jf["coeff"][0].get<double>();
        cfg.sampling.fourier.coeff_hi = jf["coeff"][1].get<double>();
      }
      if (jf.contains("out_range")) {
        cfg.sampling.fourier.out_lo = jf["out_range"][0].get<double>();
        cfg.sampling.fourier.out_hi = jf["out_range"][1].get<double>();
      }
    }
    if (js.contains("sigmoid")) {
      const Json& jg = js["sigmoid"];
      cfg.sampling.sigmoid.sharpness =
          get_or(jg, "sharpness", "sampling.sigmoid.sharpness", 20.0);
      cfg.sampling.sigmoid.floor = get_or(jg, "floor", "sampling.sigmoid.floor", 0.05);
      cfg.sampling.sigmoid.scale = get_or(jg, "scale", "sampling.sigmoid.scale", 0.95);
    }
    if (js.contains("grf")) {
      const Json& jg = js["grf"];
      cfg.sampling.grf.lengthscale =
          get_or(jg, "lengthscale", "sampling.grf.lengthscale", 0.2);
      cfg.sampling.grf_lengthscale_max =
          get_or(jg, "lengthscale_max", "sampling.grf.lengthscale_max", 0.0);
      cfg.sampling.grf.jitter = get_or(jg, "jitter", "sampling.grf.jitter", 1e-8);
    }
    if (js.contains("bc")) {
      cfg.sampling.bc_magnitude =
          get_or(js["bc"], "magnitude", "sampling.bc.magnitude", 0.01);
    }
  }

  if (j.contains("paths")) {
    const Json& jp = j["paths"];
    cfg.paths.dataset = get_or<std::string>(jp, "dataset", "paths.dataset", cfg.paths.dataset);
    cfg.paths.checkpoint =
        get_or<std::string>(jp, "checkpoint", "paths.checkpoint", cfg.paths.checkpoint);
    cfg.paths.out_dir = get_or<std::string>(jp, "out_dir", "paths.out_dir", cfg.paths.out_dir);
  }

  // Cross-field checks that do not need the mesh realized.
  cfg.net.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(load_json_file(path));
}

Json run_config_to_json(const RunConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  if (cfg.mesh.generate) {
    Json b = Json::array();
    for (int a = 0; a < cfg.mesh.dim; ++a)
      b.push_back({cfg.mesh.bounds(a, 0), cfg.mesh.bounds(a, 1)});
    j["mesh"] = {{"generate",
                  {{"dim", cfg.mesh.dim}, {"counts", cfg.mesh.counts}, {"bounds", b}}}};
  } else {
    j["mesh"] = {{"file", cfg.mesh.file}};
  }
  j["problem"] = cfg.problem;
  Json jd = Json::array();
  for (const auto& e : cfg.boundary.dirichlet)
    jd.push_back({{"set", e.set}, {"component", e.component}, {"value", e.value}});
  Json jn = Json::array();
  for (const auto& e : cfg.boundary.neumann)
    jn.push_back({{"set", e.set}, {"component", e.component}, {"value", e.value}});
  j["boundary"] = {{"dirichlet", jd},
                   {"sample_dirichlet_set", cfg.boundary.sample_dirichlet_set},
                   {"neumann", jn}};
  j["net"] = {{"hidden", cfg.net.hidden},
              {"omega0", cfg.net.omega0},
              {"latent_dim", cfg.net.latent_dim}};
  j["train"] = train_to_json(cfg.train);
  j["sampling"] = {{"kind", to_string(cfg.sampling.kind)},
                   {"n", cfg.sample_count},
                   {"rollout_augment", cfg.rollout_augment},
                   {"fourier",
                    {{"freq_x", cfg.sampling.fourier.freq_x},
                     {"freq_y", cfg.sampling.fourier.freq_y},
                     {"freq_z", cfg.sampling.fourier.freq_z},
                     {"coeff", {cfg.sampling.fourier.coeff_lo, cfg.sampling.fourier.coeff_hi}},
                     {"out_range", {cfg.sampling.fourier.out_lo, cfg.sampling.fourier.out_hi}}}},
                   {"sigmoid",
                    {{"sharpness", cfg.sampling.sigmoid.sharpness},
                     {"floor", cfg.sampling.sigmoid.floor},
                     {"scale", cfg.sampling.sigmoid.scale}}},
                   {"grf",
                    {{"lengthscale", cfg.sampling.grf.lengthscale},
                     {"lengthscale_max", cfg.sampling.grf_lengthscale_max},
                     {"jitter", cfg.sampling.grf.jitter}}},
                   {"bc", {{"magnitude", cfg.sampling.bc_magnitude}}}};
  j["paths"] = {{"dataset", cfg.paths.dataset},
                {"checkpoint", cfg.paths.checkpoint},
                {"out_dir", cfg.paths.out_dir}};
  return j;
}

}  // namespace ifol
