#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "ifol/fem.hpp"
#include "ifol/field_net.hpp"
#include "ifol/mesh.hpp"
#include "ifol/oracle.hpp"
#include "ifol/sampling.hpp"
#include "ifol/tape.hpp"

namespace ifol {

struct TrainConfig {
  int k_encode = 3;          // inner (PDE encoding) steps
  double alpha = 1e-2;       // encoding learning rate
  double lr_start = 1e-4;    // outer learning rate, exponential decay ...
  double lr_end = 1e-6;      // ... to this value at the final epoch
  int epochs = 100;
  int batch_size = 32;
  bool grad_norm = true;     // normalize the averaged outer gradient
  bool first_order = false;  // drop second-order terms of the meta-gradient
  bool detach_residual = false;
  std::uint64_t seed = 0;
  int threads = 1;
  int checkpoint_every = 0;  // epochs between checkpoint callbacks; 0 = none

  void validate() const;
  double learning_rate(int epoch) const;
};

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState init(int n);
  /// In-place parameter update for gradient g at learning rate lr.
  void update(Eigen::VectorXd& params, const Eigen::VectorXd& g, double lr);
};

struct TrainHistory {
  std::vector<double> mean_loss;
  std::vector<double> grad_norm;
  std::vector<double> wall_time;  // seconds per epoch; kept out of CSV output
};

struct RolloutResult {
  std::vector<Eigen::VectorXd> fields;
  bool diverged = false;
};

/// Shared state for encoding/training/inference on a fixed (mesh, problem,
/// net) triple. Owns one recorded loss program per worker thread; per-sample
/// evaluations are bit-identical no matter which worker runs them.
class Engine {
 public:
  Engine(Mesh mesh, PdeProblem problem, FieldNetConfig net_config,
         BoundarySpec boundary, TrainConfig train_config);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Algorithm-1 PDE encoding: k_encode gradient-descent steps on the
  /// physical loss with respect to the latent code, starting from zero.
  LatentCode encode(const Sample& sample, const FieldNetParams& params) const;

  /// Encode every sample of the batch, form the averaged meta-gradient
  /// (exact through the inner loop unless first_order), optionally normalize
  /// it, and take one Adam step at learning rate lr.
  double outer_step(const std::vector<Sample>& batch, FieldNetParams& params,
                    AdamState& adam, double lr, double* grad_norm_out = nullptr);

  /// Algorithm-2 training loop: shuffled mini-batches, per-epoch history,
  /// optional checkpoint callback. Deterministic for a fixed seed.
  std::pair<FieldNetParams, TrainHistory> train(
      const std::vector<Sample>& dataset, FieldNetParams params,
      const std::function<void(int, const FieldNetParams&)>& on_checkpoint = {});

  /// Encode on the training mesh, then decode on eval_mesh with the stored
  /// coordinate normalization and hard Dirichlet overwrite. eval_mesh must
  /// carry the node-set names the boundary spec references.
  Eigen::VectorXd infer(const Sample& sample, const FieldNetParams& params,
                        const Mesh& eval_mesh) const;
  Eigen::VectorXd infer(const Sample& sample, const FieldNetParams& params) const;

  /// Repeated one-step inference with u_prev chained from the previous
  /// output. On divergence the sequence is truncated and flagged.
  RolloutResult rollout(const Eigen::VectorXd& u0, const FieldNetParams& params,
                        int steps) const;

  /// dJ/dc of J = integral(infer(c)) through the adapted latent code: the
  /// operator-Jacobian path, no extra nonlinear solves.
  SensitivityResult sensitivity(const Sample& sample,
                                const FieldNetParams& params) const;

  const Mesh& mesh() const { return mesh_; }
  const PdeProblem& problem() const { return problem_; }
  const FieldNetConfig& net_config() const { return net_config_; }
  const TrainConfig& train_config() const { return train_config_; }
  const CoordMap& coord_map() const { return coord_map_; }
  const BoundarySpec& boundary() const { return boundary_; }

  /// Control field / Dirichlet data a sample binds to, defaults filled in.
  Eigen::VectorXd control_of(const Sample& sample) const;
  Eigen::VectorXd bc_values_of(const Sample& sample) const;
  DirichletSpec dirichlet_of(const Sample& sample, const Mesh& mesh) const;

 private:
  struct Program;
  Program& worker_program(int worker) const;

  struct PerSample {
    Eigen::VectorXd grad;
    double loss = 0.0;
    Eigen::VectorXd latent;
  };
  PerSample sample_grad(Program& prog, const Sample& sample,
                        const FieldNetParams& params) const;

  Mesh mesh_;
  PdeProblem problem_;
  FieldNetConfig net_config_;
  BoundarySpec boundary_;
  TrainConfig train_config_;
  DirichletSpec dirichlet_;       // structure on the training mesh
  Eigen::VectorXd external_load_;
  CoordMap coord_map_;
  Eigen::VectorXd default_control_;
  mutable std::vector<std::unique_ptr<Program>> programs_;
};

}  // namespace ifol
