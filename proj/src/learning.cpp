#include "ifol/learning.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "ifol/rng.hpp"

namespace ifol {

void TrainConfig::validate() const {
  if (k_encode < 0) throw ConfigError("train: k_encode must be >= 0");
  if (!(alpha > 0)) throw ConfigError("train: alpha must be positive");
  if (!(lr_start >= lr_end) || !(lr_end > 0))
    throw ConfigError("train: learning-rate schedule needs start >= end > 0");
  if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs/batch_size must be >= 1");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

double TrainConfig::learning_rate(int epoch) const {
  if (epochs <= 1 || lr_start == lr_end) return lr_start;
  const double f = static_cast<double>(epoch) / (epochs - 1);
  return lr_start * std::pow(lr_end / lr_start, f);
}

AdamState AdamState::init(int n) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(n);
  s.v = Eigen::VectorXd::Zero(n);
  return s;
}

void AdamState::update(Eigen::VectorXd& params, const Eigen::VectorXd& g, double lr) {
  ++step;
  m = beta1 * m + (1 - beta1) * g;
  v = beta2 * v + (1 - beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  params -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
}

struct Engine::Program {
  Tape tape;
  DecodeGraph dec;
  LossGraph lg;
  NodeId c_leaf, uprev_leaf, bc_leaf;
};

Engine::Engine(Mesh mesh, PdeProblem problem, FieldNetConfig net_config,
               BoundarySpec boundary, TrainConfig train_config)
    : mesh_(std::move(mesh)),
      problem_(std::move(problem)),
      net_config_(std::move(net_config)),
      boundary_(std::move(boundary)),
      train_config_(train_config) {
  mesh_.validate();
  validate_problem(problem_, mesh_);
  net_config_.validate();
  train_config_.validate();
  const int ncomp = solution_components(problem_, mesh_.dim);
  if (net_config_.in_dim != mesh_.dim)
    throw ConfigError("engine: net in_dim must equal mesh dim");
  if (net_config_.out_dim != ncomp)
    throw ConfigError("engine: net out_dim must equal the solution components");
  dirichlet_ = boundary_.expand_dirichlet(mesh_, ncomp);
  external_load_ = boundary_.external_load(mesh_, ncomp);
  coord_map_ = CoordMap::from_mesh(mesh_);
  default_control_ = default_control(problem_, mesh_);
  programs_.resize(std::max(1, train_config_.threads));
}

Engine::~Engine() = default;

Engine::Program& Engine::worker_program(int worker) const {
  auto& slot = programs_[worker];
  if (!slot) {
    auto prog = std::make_unique<Program>();
    const int ncomp = solution_components(problem_, mesh_.dim);
    const int ndof = mesh_.num_nodes() * ncomp;
    prog->dec = build_decode_graph(prog->tape, coord_map_.apply_all(mesh_.coords),
                                   net_config_);
    prog->c_leaf = prog->tape.var(mesh_.num_nodes(), 1, "control");
    if (is_transient(problem_))
      prog->uprev_leaf = prog->tape.var(ndof, 1, "u_prev");
    prog->bc_leaf = prog->tape.var(ndof, 1, "bc_values");
    Eigen::VectorXd mask = dirichlet_free_mask(dirichlet_, ndof, ncomp);
    prog->lg = build_loss_graph(prog->tape, mesh_, problem_, prog->dec.out_flat,
                                prog->c_leaf, prog->uprev_leaf, prog->bc_leaf, mask,
                                train_config_.detach_residual,
                                external_load_.size() ? &external_load_ : nullptr);
    slot = std::move(prog);
  }
  return *slot;
}

Eigen::VectorXd Engine::control_of(const Sample& sample) const {
  if (sample.c.size() == 0) return default_control_;
  if (sample.c.size() != mesh_.num_nodes())
    throw ConfigError("sample: control field length does not match the mesh");
  return sample.c;
}

DirichletSpec Engine::dirichlet_of(const Sample& sample, const Mesh& mesh) const {
  const int ncomp = solution_components(problem_, mesh.dim);
  return boundary_.expand_dirichlet(mesh, ncomp,
                                    sample.bc ? &*sample.bc : nullptr);
}

Eigen::VectorXd Engine::bc_values_of(const Sample& sample) const {
  const int ncomp = solution_components(problem_, mesh_.dim);
  DirichletSpec spec = dirichlet_of(sample, mesh_);
  Eigen::VectorXd bc = Eigen::VectorXd::Zero(mesh_.num_nodes() * ncomp);
  for (const auto& e : spec.entries) bc[e.node * ncomp + e.component] = e.value;
  return bc;
}

LatentCode Engine::encode(const Sample& sample, const FieldNetParams& params) const {
  Program& prog = worker_program(0);
  Tape& tape = prog.tape;
  set_graph_params(tape, prog.dec, params);
  tape.set_value(prog.c_leaf, control_of(sample));
  if (is_transient(problem_)) {
    if (!sample.u_prev) throw ConfigError("encode: transient problem needs u_prev");
    tape.set_value(prog.uprev_leaf, *sample.u_prev);
  }
  tape.set_value(prog.bc_leaf, bc_values_of(sample));

  InnerLoop inner{prog.lg.loss, prog.dec.latent, train_config_.alpha,
                  train_config_.k_encode};
  Eigen::VectorXd l = Eigen::VectorXd::Zero(net_config_.latent_dim);
  for (int j = 0; j < inner.steps; ++j) {
    tape.set_value(prog.dec.latent, l);
    tape.forward();
    const double lv = tape.scalar(prog.lg.loss);
    if (!std::isfinite(lv))
      throw NumericalError("encode diverged at inner step " + std::to_string(j));
    tape.backward(prog.lg.loss, {prog.dec.latent});
    l -= inner.alpha * tape.adjoint(prog.dec.latent).matrix();
    if (!l.allFinite())
      throw NumericalError("encode diverged at inner step " + std::to_string(j));
  }
  return {l};
}

Engine::PerSample Engine::sample_grad(Program& prog, const Sample& sample,
                                      const FieldNetParams& params) const {
  Tape& tape = prog.tape;
  set_graph_params(tape, prog.dec, params);
  tape.set_value(prog.c_leaf, control_of(sample));
  if (is_transient(problem_)) {
    if (!sample.u_prev) throw ConfigError("train: transient problem needs u_prev");
    tape.set_value(prog.uprev_leaf, *sample.u_prev);
  }
  tape.set_value(prog.bc_leaf, bc_values_of(sample));

  InnerLoop inner{prog.lg.loss, prog.dec.latent, train_config_.alpha,
                  train_config_.k_encode};
  UnrolledResult r = unrolled_grad(tape, inner, prog.lg.loss, prog.dec.weight_leaves,
                                   train_config_.first_order);
  PerSample out;
  out.loss = r.outer_value;
  out.latent = r.latent_path.back();
  out.grad.resize(params.num_scalars());
  int at = 0;
  for (const Mat& g : r.grads) {
    std::copy(g.data(), g.data() + g.size(), out.grad.data() + at);
    at += static_cast<int>(g.size());
  }
  return out;
}

double Engine::outer_step(const std::vector<Sample>& batch, FieldNetParams& params,
                          AdamState& adam, double lr, double* grad_norm_out) {
  if (batch.empty()) throw ConfigError("outer_step: empty batch");
  const int nb = static_cast<int>(batch.size());
  std::vector<PerSample> results(nb);

  const int nthreads = std::min<int>(std::max(1, train_config_.threads), nb);
  if (nthreads == 1) {
    Program& prog = worker_program(0);
    for (int i = 0; i < nb; ++i) results[i] = sample_grad(prog, batch[i], params);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (int w = 0; w < nthreads; ++w) {
      pool.emplace_back([&, w] {
        try {
          Program& prog = worker_program(w);
          for (;;) {
            const int i = next.fetch_add(1);
            if (i >= nb) break;
            results[i] = sample_grad(prog, batch[i], params);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }

  // Ordered reduction: identical results for any thread count.
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.num_scalars());
  double loss_sum = 0.0;
  for (int i = 0; i < nb; ++i) {
    g += results[i].grad;
    loss_sum += results[i].loss;
  }
  g /= nb;
  if (!g.allFinite())
    throw NumericalError("outer_step: non-finite meta-gradient (mean loss " +
                         std::to_string(loss_sum / nb) + ")");

  const double gn = g.norm();
  if (grad_norm_out) *grad_norm_out = gn;
  if (train_config_.grad_norm && gn > 0) g /= gn;

  Eigen::VectorXd flat = params.to_flat();
  adam.update(flat, g, lr);
  params.from_flat(flat);
  return loss_sum / nb;
}

std::pair<FieldNetParams, TrainHistory> Engine::train(
    const std::vector<Sample>& dataset, FieldNetParams params,
    const std::function<void(int, const FieldNetParams&)>& on_checkpoint) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  TrainHistory history;
  AdamState adam = AdamState::init(params.num_scalars());
  Rng shuffle_rng = make_stream(train_config_.seed, "shuffle");
  const int n = static_cast<int>(dataset.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < train_config_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = train_config_.learning_rate(epoch);
    // Fisher-Yates with the dedicated stream.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.next_u64() % (i + 1));
      std::swap(order[i], order[j]);
    }
    double loss_sum = 0.0, gn_sum = 0.0;
    int batches = 0;
    for (int at = 0; at < n; at += train_config_.batch_size) {
      const int bs = std::min(train_config_.batch_size, n - at);
      std::vector<Sample> batch;
      batch.reserve(bs);
      for (int i = 0; i < bs; ++i) batch.push_back(dataset[order[at + i]]);
      double gn = 0.0;
      const double mean_loss = outer_step(batch, params, adam, lr, &gn);
      loss_sum += mean_loss * bs;
      gn_sum += gn;
      ++batches;
    }
    history.mean_loss.push_back(loss_sum / n);
    history.grad_norm.push_back(gn_sum / batches);
    history.wall_time.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (on_checkpoint && train_config_.checkpoint_every > 0 &&
        (epoch + 1) % train_config_.checkpoint_every == 0)
      on_checkpoint(epoch + 1, params);
  }
  return {std::move(params), std::move(history)};
}

Eigen::VectorXd Engine::infer(const Sample& sample, const FieldNetParams& params,
                              const Mesh& eval_mesh) const {
  LatentCode l = encode(sample, params);
  return nodal_field(eval_mesh, l, net_config_, params, coord_map_,
                     dirichlet_of(sample, eval_mesh));
}

Eigen::VectorXd Engine::infer(const Sample& sample, const FieldNetParams& params) const {
  return infer(sample, params, mesh_);
}

RolloutResult Engine::rollout(const Eigen::VectorXd& u0, const FieldNetParams& params,
                              int steps) const {
  if (!is_transient(problem_)) throw ConfigError("rollout: problem is not transient");
  RolloutResult out;
  Sample s;
  s.u_prev = u0;
  for (int step = 0; step < steps; ++step) {
    Eigen::VectorXd u;
    try {
      u = infer(s, params);
    } catch (const NumericalError&) {
      out.diverged = true;
      break;
    }
    if (!u.allFinite()) {
      out.diverged = true;
      break;
    }
    out.fields.push_back(u);
    s.u_prev = std::move(u);
  }
  return out;
}

SensitivityResult Engine::sensitivity(const Sample& sample,
                                      const FieldNetParams& params) const {
  Program& prog = worker_program(0);
  if (!prog.lg.objective.valid())
    throw ConfigError("sensitivity: only scalar problems define the objective");
  Tape& tape = prog.tape;
  set_graph_params(tape, prog.dec, params);
  tape.set_value(prog.c_leaf, control_of(sample));
  if (is_transient(problem_)) {
    if (!sample.u_prev) throw ConfigError("sensitivity: transient problem needs u_prev");
    tape.set_value(prog.uprev_leaf, *sample.u_prev);
  }
  tape.set_value(prog.bc_leaf, bc_values_of(sample));

  InnerLoop inner{prog.lg.loss, prog.dec.latent, train_config_.alpha,
                  train_config_.k_encode};
  UnrolledResult r = unrolled_grad(tape, inner, prog.lg.objective, {prog.c_leaf},
                                   train_config_.first_order);
  SensitivityResult res;
  res.objective = r.outer_value;
  res.map = r.grads[0].matrix();
  return res;
}

}  // namespace ifol
