#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ifol/io.hpp"
#include "ifol/learning.hpp"
#include "ifol/oracle.hpp"
#include "ifol/rng.hpp"

namespace py = pybind11;
using namespace ifol;

namespace {

Eigen::VectorXd opt_vec(const py::object& o) {
  if (o.is_none()) return {};
  return o.cast<Eigen::VectorXd>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "implicit finite operator learning: C++ core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  // --- mesh ---------------------------------------------------------------
  py::class_<Mesh>(m, "Mesh")
      .def_readonly("dim", &Mesh::dim)
      .def_property_readonly("elem_type",
                             [](const Mesh& me) { return to_string(me.elem_type); })
      .def_readonly("coords", &Mesh::coords)
      .def_readonly("elements", &Mesh::elements)
      .def_readonly("node_sets", &Mesh::node_sets)
      .def_property_readonly("num_nodes", &Mesh::num_nodes)
      .def_property_readonly("num_elements", &Mesh::num_elements)
      .def("content_hash", &Mesh::content_hash)
      .def("node_set", &Mesh::node_set, py::return_value_policy::copy);

  m.def("generate_grid", &generate_grid, py::arg("dim"), py::arg("counts"),
        py::arg("bounds"));
  m.def("save_mesh", &save_mesh);
  m.def("load_mesh", &load_mesh);

  // --- problems -------------------------------------------------------------
  py::class_<LinearElasticity>(m, "LinearElasticity")
      .def(py::init([](Eigen::VectorXd field, double youngs, double poisson) {
             return LinearElasticity{std::move(field), youngs, poisson, true};
           }),
           py::arg("elasticity_field") = Eigen::VectorXd(), py::arg("youngs") = 1.0,
           py::arg("poisson") = 0.3)
      .def_readwrite("elasticity_field", &LinearElasticity::elasticity_field)
      .def_readwrite("youngs", &LinearElasticity::youngs)
      .def_readwrite("poisson", &LinearElasticity::poisson);
  py::class_<Hyperelastic>(m, "Hyperelastic")
      .def(py::init([](Eigen::VectorXd mu, Eigen::VectorXd kappa) {
             return Hyperelastic{std::move(mu), std::move(kappa)};
           }),
           py::arg("mu_field"), py::arg("kappa_field"))
      .def_readwrite("mu_field", &Hyperelastic::mu_field)
      .def_readwrite("kappa_field", &Hyperelastic::kappa_field);
  py::class_<StationaryDiffusion>(m, "StationaryDiffusion")
      .def(py::init([](Eigen::VectorXd k0, double qc, double src) {
             return StationaryDiffusion{std::move(k0), qc, src};
           }),
           py::arg("k0_field") = Eigen::VectorXd(), py::arg("quartic_coeff") = 2.0,
           py::arg("source") = 0.0)
      .def_readwrite("k0_field", &StationaryDiffusion::k0_field)
      .def_readwrite("quartic_coeff", &StationaryDiffusion::quartic_coeff)
      .def_readwrite("source", &StationaryDiffusion::source);
  py::class_<TransientThermal>(m, "TransientThermal")
      .def(py::init([](Eigen::VectorXd k0, double alpha, double rho_cp, double dt,
                       double src) {
             return TransientThermal{std::move(k0), alpha, rho_cp, dt, src};
           }),
           py::arg("k0_field") = Eigen::VectorXd(), py::arg("alpha") = 0.0,
           py::arg("rho_cp") = 1.0, py::arg("dt") = 1e-2, py::arg("source") = 0.0)
      .def_readwrite("k0_field", &TransientThermal::k0_field)
      .def_readwrite("alpha", &TransientThermal::alpha)
      .def_readwrite("rho_cp", &TransientThermal::rho_cp)
      .def_readwrite("dt", &TransientThermal::dt);
  py::class_<AllenCahn>(m, "AllenCahn")
      .def(py::init([](double eps, double dt) { return AllenCahn{eps, dt}; }),
           py::arg("eps") = 0.1, py::arg("dt") = 1e-2)
      .def_readwrite("eps", &AllenCahn::eps)
      .def_readwrite("dt", &AllenCahn::dt);

  // --- boundary conditions ---------------------------------------------------
  py::class_<DirichletEntry>(m, "DirichletEntry")
      .def(py::init<int, int, double>(), py::arg("node"), py::arg("component"),
           py::arg("value"))
      .def_readwrite("node", &DirichletEntry::node)
      .def_readwrite("component", &DirichletEntry::component)
      .def_readwrite("value", &DirichletEntry::value);
  py::class_<DirichletSpec>(m, "DirichletSpec")
      .def(py::init<>())
      .def_readwrite("entries", &DirichletSpec::entries)
      .def("add_set", &DirichletSpec::add_set);
  py::class_<BoundaryEntry>(m, "BoundaryEntry")
      .def(py::init([](std::string set, int comp, double value) {
             return BoundaryEntry{std::move(set), comp, value};
           }),
           py::arg("set"), py::arg("component") = 0, py::arg("value") = 0.0)
      .def_readwrite("set", &BoundaryEntry::set)
      .def_readwrite("component", &BoundaryEntry::component)
      .def_readwrite("value", &BoundaryEntry::value);
  py::class_<BoundarySpec>(m, "BoundarySpec")
      .def(py::init<>())
      .def_readwrite("dirichlet", &BoundarySpec::dirichlet)
      .def_readwrite("sample_dirichlet_set", &BoundarySpec::sample_dirichlet_set)
      .def_readwrite("neumann", &BoundarySpec::neumann)
      .def("expand_dirichlet",
           [](const BoundarySpec& b, const Mesh& mesh, int ncomp, py::object bc) {
             Eigen::VectorXd v = opt_vec(bc);
             return b.expand_dirichlet(mesh, ncomp, v.size() ? &v : nullptr);
           },
           py::arg("mesh"), py::arg("n_components"), py::arg("sample_bc") = py::none());

  m.def("apply_dirichlet", &apply_dirichlet);
  m.def("boundary_load", &boundary_load);
  m.def("solution_components", &solution_components);

  // --- fem ----------------------------------------------------------------------
  m.def(
      "assemble",
      [](const PdeProblem& pb, const Mesh& mesh, const Eigen::VectorXd& u,
         const Eigen::VectorXd& c, py::object u_prev, const DirichletSpec& bc,
         bool want_tangent, bool detach) {
        Eigen::VectorXd up = opt_vec(u_prev);
        AssembleOptions opts;
        opts.want_tangent = want_tangent;
        opts.detach_residual = detach;
        GlobalWork w = assemble(pb, mesh, u, c, up.size() ? &up : nullptr, bc, opts);
        py::dict out;
        out["loss"] = w.loss;
        out["grad"] = w.grad;
        if (w.tangent) out["tangent"] = Eigen::MatrixXd(*w.tangent);
        return out;
      },
      py::arg("problem"), py::arg("mesh"), py::arg("u"), py::arg("c"),
      py::arg("u_prev") = py::none(), py::arg("dirichlet") = DirichletSpec{},
      py::arg("want_tangent") = false, py::arg("detach_residual") = false);

  // --- oracle ---------------------------------------------------------------------
  py::class_<NewtonConfig>(m, "NewtonConfig")
      .def(py::init<>())
      .def_readwrite("tol_residual", &NewtonConfig::tol_residual)
      .def_readwrite("max_iters", &NewtonConfig::max_iters)
      .def_readwrite("line_search", &NewtonConfig::line_search)
      .def_readwrite("detach_residual", &NewtonConfig::detach_residual);
  m.def(
      "newton_solve",
      [](const PdeProblem& pb, const Mesh& mesh, const Eigen::VectorXd& c,
         const DirichletSpec& bc, py::object u0, const NewtonConfig& cfg,
         py::object u_prev) {
        Eigen::VectorXd u0v = opt_vec(u0), upv = opt_vec(u_prev);
        int iters = 0;
        Eigen::VectorXd u = newton_solve(pb, mesh, c, bc, u0v, cfg,
                                         upv.size() ? &upv : nullptr, nullptr, &iters);
        return py::make_tuple(u, iters);
      },
      py::arg("problem"), py::arg("mesh"), py::arg("c"), py::arg("dirichlet"),
      py::arg("u0") = py::none(), py::arg("config") = NewtonConfig{},
      py::arg("u_prev") = py::none());
  m.def("fem_rollout", &fem_rollout, py::arg("problem"), py::arg("mesh"), py::arg("c"),
        py::arg("dirichlet"), py::arg("u0"), py::arg("steps"),
        py::arg("config") = NewtonConfig{});
  py::class_<SensitivityResult>(m, "SensitivityResult")
      .def_readonly("objective", &SensitivityResult::objective)
      .def_readonly("map", &SensitivityResult::map);
  m.def(
      "adjoint_sensitivity",
      [](const PdeProblem& pb, const Mesh& mesh, const Eigen::VectorXd& c,
         const Eigen::VectorXd& u, const DirichletSpec& bc, bool detach) {
        return adjoint_sensitivity(pb, mesh, c, u, bc, detach);
      },
      py::arg("problem"), py::arg("mesh"), py::arg("c"), py::arg("u_solved"),
      py::arg("dirichlet"), py::arg("detach_residual") = false);
  m.def("error_metrics", [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    ErrorMetrics e = error_metrics(a, b);
    return py::make_tuple(e.rel_l2, e.max_pointwise);
  });
  m.def("pearson", &pearson);
  m.def("integrate_solution",
        [](const PdeProblem& pb, const Mesh& mesh, const Eigen::VectorXd& u) {
          return integrate_solution(pb, mesh, u);
        });

  // --- field net --------------------------------------------------------------------
  py::class_<FieldNetConfig>(m, "FieldNetConfig")
      .def(py::init([](std::vector<int> hidden, double omega0, int latent_dim,
                       int in_dim, int out_dim) {
             FieldNetConfig c;
             c.hidden = std::move(hidden);
             c.omega0 = omega0;
             c.latent_dim = latent_dim;
             c.in_dim = in_dim;
             c.out_dim = out_dim;
             return c;
           }),
           py::arg("hidden") = std::vector<int>{32, 32, 32}, py::arg("omega0") = 30.0,
           py::arg("latent_dim") = 64, py::arg("in_dim") = 2, py::arg("out_dim") = 1)
      .def_readwrite("in_dim", &FieldNetConfig::in_dim)
      .def_readwrite("out_dim", &FieldNetConfig::out_dim)
      .def_readwrite("hidden", &FieldNetConfig::hidden)
      .def_readwrite("omega0", &FieldNetConfig::omega0)
      .def_readwrite("latent_dim", &FieldNetConfig::latent_dim);
  py::class_<FieldNetParams>(m, "FieldNetParams")
      .def("to_flat", &FieldNetParams::to_flat)
      .def("from_flat", &FieldNetParams::from_flat)
      .def("num_scalars", &FieldNetParams::num_scalars);
  py::class_<LatentCode>(m, "LatentCode")
      .def(py::init([](Eigen::VectorXd v) { return LatentCode{std::move(v)}; }))
      .def_readwrite("values", &LatentCode::values);
  py::class_<CoordMap>(m, "CoordMap")
      .def_static("from_mesh", &CoordMap::from_mesh)
      .def_readonly("lo", &CoordMap::lo)
      .def_readonly("hi", &CoordMap::hi)
      .def("apply_all", &CoordMap::apply_all);
  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));
  m.def("decode", &decode, py::arg("points_normalized"), py::arg("latent"),
        py::arg("config"), py::arg("params"));
  m.def("nodal_field", &nodal_field, py::arg("mesh"), py::arg("latent"),
        py::arg("config"), py::arg("params"), py::arg("coord_map"),
        py::arg("dirichlet") = DirichletSpec{});

  // --- sampling -----------------------------------------------------------------------
  py::class_<Sample>(m, "Sample")
      .def(py::init([](py::object c, py::object u_prev, py::object bc,
                       std::uint64_t seed) {
             Sample s;
             s.seed = seed;
             s.c = opt_vec(c);
             if (!u_prev.is_none()) s.u_prev = u_prev.cast<Eigen::VectorXd>();
             if (!bc.is_none()) s.bc = bc.cast<Eigen::VectorXd>();
             return s;
           }),
           py::arg("c") = py::none(), py::arg("u_prev") = py::none(),
           py::arg("bc") = py::none(), py::arg("seed") = 0)
      .def_readwrite("seed", &Sample::seed)
      .def_readwrite("c", &Sample::c)
      .def_readwrite("u_prev", &Sample::u_prev)
      .def_readwrite("bc", &Sample::bc);
  py::class_<FourierSpec>(m, "FourierSpec")
      .def(py::init<>())
      .def_readwrite("freq_x", &FourierSpec::freq_x)
      .def_readwrite("freq_y", &FourierSpec::freq_y)
      .def_readwrite("freq_z", &FourierSpec::freq_z)
      .def_readwrite("coeff_lo", &FourierSpec::coeff_lo)
      .def_readwrite("coeff_hi", &FourierSpec::coeff_hi)
      .def_readwrite("out_lo", &FourierSpec::out_lo)
      .def_readwrite("out_hi", &FourierSpec::out_hi);
  py::class_<SigmoidSpec>(m, "SigmoidSpec")
      .def(py::init<>())
      .def_readwrite("sharpness", &SigmoidSpec::sharpness)
      .def_readwrite("floor", &SigmoidSpec::floor)
      .def_readwrite("scale", &SigmoidSpec::scale);
  py::class_<GrfSpec>(m, "GrfSpec")
      .def(py::init<>())
      .def_readwrite("lengthscale", &GrfSpec::lengthscale)
      .def_readwrite("jitter", &GrfSpec::jitter);
  m.def("fourier_field", &fourier_field);
  m.def("sigmoid_project", &sigmoid_project);
  m.def("grf_field", &grf_field);
  m.def("random_bc_vector", &random_bc_vector);

  // --- learning ------------------------------------------------------------------------
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("k_encode", &TrainConfig::k_encode)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("lr_start", &TrainConfig::lr_start)
      .def_readwrite("lr_end", &TrainConfig::lr_end)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("grad_norm", &TrainConfig::grad_norm)
      .def_readwrite("first_order", &TrainConfig::first_order)
      .def_readwrite("detach_residual", &TrainConfig::detach_residual)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("threads", &TrainConfig::threads);
  py::class_<Engine>(m, "Engine")
      .def(py::init<Mesh, PdeProblem, FieldNetConfig, BoundarySpec, TrainConfig>(),
           py::arg("mesh"), py::arg("problem"), py::arg("net_config"),
           py::arg("boundary"), py::arg("train_config"))
      .def("encode", &Engine::encode)
      .def("train",
           [](Engine& eng, const std::vector<Sample>& data, const FieldNetParams& p0) {
             auto [params, hist] = eng.train(data, p0);
             py::dict h;
             h["mean_loss"] = hist.mean_loss;
             h["grad_norm"] = hist.grad_norm;
             h["wall_time"] = hist.wall_time;
             return py::make_tuple(params, h);
           })
      .def("infer",
           [](const Engine& eng, const Sample& s, const FieldNetParams& p,
              py::object eval_mesh) {
             if (eval_mesh.is_none()) return eng.infer(s, p);
             return eng.infer(s, p, eval_mesh.cast<const Mesh&>());
           },
           py::arg("sample"), py::arg("params"), py::arg("eval_mesh") = py::none())
      .def("rollout",
           [](const Engine& eng, const Eigen::VectorXd& u0, const FieldNetParams& p,
              int steps) {
             RolloutResult r = eng.rollout(u0, p, steps);
             return py::make_tuple(r.fields, r.diverged);
           })
      .def("sensitivity", &Engine::sensitivity)
      .def_property_readonly("coord_map", &Engine::coord_map);
  m.def("make_dataset",
        [](const std::string& kind, int n, const Mesh& mesh, std::uint64_t seed,
           const FourierSpec& fourier, const SigmoidSpec& sigmoid, const GrfSpec& grf,
           double grf_lengthscale_max, double bc_magnitude, int bc_components) {
          DatasetSpec spec;
          spec.kind = dataset_kind_from_string(kind);
          spec.fourier = fourier;
          spec.sigmoid = sigmoid;
          spec.grf = grf;
          spec.grf_lengthscale_max = grf_lengthscale_max;
          spec.bc_magnitude = bc_magnitude;
          spec.bc_components = bc_components;
          return make_dataset(spec, n, mesh, seed);
        },
        py::arg("kind"), py::arg("n"), py::arg("mesh"), py::arg("seed") = 0,
        py::arg("fourier") = FourierSpec{}, py::arg("sigmoid") = SigmoidSpec{},
        py::arg("grf") = GrfSpec{}, py::arg("grf_lengthscale_max") = 0.0,
        py::arg("bc_magnitude") = 0.01, py::arg("bc_components") = 2);

  // --- io ---------------------------------------------------------------------------------
  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<>())
      .def_readwrite("net", &Checkpoint::net)
      .def_readwrite("params", &Checkpoint::params)
      .def_readwrite("coord_map", &Checkpoint::coord_map)
      .def_readwrite("train", &Checkpoint::train)
      .def_readwrite("epoch", &Checkpoint::epoch)
      .def_readwrite("mesh_hash", &Checkpoint::mesh_hash);
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);
  m.def("save_dataset", [](const std::string& path, const std::vector<Sample>& s,
                           const Mesh& mesh, const std::string& kind) {
    save_dataset(path, s, mesh, dataset_kind_from_string(kind));
  });
  m.def("load_dataset", &load_dataset);
  m.def("stream_seed", [](std::uint64_t root, const std::string& name) {
    return stream_seed(root, name);
  });
}
