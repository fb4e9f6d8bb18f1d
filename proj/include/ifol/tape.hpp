#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ifol/errors.hpp"

namespace ifol {

using Mat = Eigen::ArrayXXd;
using IdxMat = Eigen::ArrayXXi;

struct NodeId {
  std::int32_t idx = -1;
  bool valid() const { return idx >= 0; }
  bool operator==(const NodeId&) const = default;
};

enum class Op : std::uint8_t {
  Const,     // fixed leaf, never differentiated
  Input,     // settable leaf without gradient (per-sample data)
  Var,       // settable leaf with gradient
  Add, Sub, Mul, Div, Neg,
  MulConst,  // elementwise product with a constant array
  AddConst,
  Affine,    // alpha * x + beta
  AddColVec, // matrix + column vector broadcast over columns
  MatMul,
  SirenAct,  // sin(omega0 * (x + shift 1^T)); caches the cosine
  Sin, Cos, Exp, Log, Square, PowI, Pow,
  Sum,       // all entries -> 1x1
  RowSum,    // sum over rows -> 1 x c
  ColSum,    // sum over cols -> r x 1
  Gather,    // out(i,j) = vec(idx(i,j))
  Reshape,
  Dot,       // sum(a .* b) -> 1x1
  StopGrad,  // value passthrough, blocks both adjoints and tangents
};

const char* op_name(Op op);

/// Reverse-mode computation graph over dense array values, with a
/// forward-over-reverse second-order sweep (tangents carried through a
/// replayed forward pass and a dual-valued reverse pass).
///
/// Built once per worker, then re-evaluated with new leaf values; buffers are
/// reused and every sweep visits nodes in a fixed order, so results are
/// bit-reproducible regardless of how work is distributed across threads.
class Tape {
 public:
  // --- graph construction ----------------------------------------------
  NodeId constant(Mat value, std::string label = {});
  NodeId constant(std::shared_ptr<const Mat> value, std::string label = {});
  NodeId input(int rows, int cols, std::string label = {});
  NodeId var(int rows, int cols, std::string label = {});

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId mul_const(NodeId a, std::shared_ptr<const Mat> c);
  NodeId add_const(NodeId a, std::shared_ptr<const Mat> c);
  NodeId affine(NodeId a, double alpha, double beta);
  NodeId add_colvec(NodeId mat, NodeId colvec);
  NodeId matmul(NodeId a, NodeId b);
  NodeId siren_act(NodeId pre, NodeId shift, double omega0);
  NodeId sin(NodeId a);
  NodeId cos(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId pow_int(NodeId a, int n);
  NodeId pow(NodeId a, double p);
  NodeId sum(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId col_sum(NodeId a);
  NodeId gather(NodeId vec, std::shared_ptr<const IdxMat> idx);
  NodeId reshape(NodeId a, int rows, int cols);
  NodeId dot(NodeId a, NodeId b);
  NodeId stop_grad(NodeId a);

  int rows(NodeId n) const { return nodes_[n.idx].rows; }
  int cols(NodeId n) const { return nodes_[n.idx].cols; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // --- evaluation --------------------------------------------------------
  void set_value(NodeId leaf, const Mat& v);
  const Mat& value(NodeId n) const { return val_[n.idx]; }

  /// Recomputes every non-leaf value in topological (construction) order.
  void forward();

  /// Scalar value of a 1x1 node; throws NumericalError with node provenance
  /// if evaluation produced a non-finite value anywhere upstream.
  double scalar(NodeId out) const;

  /// Adjoints of `out` (1x1) with respect to the leaves in `wrt`. Only
  /// subgraphs that reach a requested leaf are traversed.
  void backward(NodeId out, const std::vector<NodeId>& wrt);
  const Mat& adjoint(NodeId leaf) const;

  /// Tangent seeds for the next forward_tangent sweep; unseeded leaves are
  /// treated as zero.
  void set_tangent(NodeId leaf, const Mat& t);
  void forward_tangent();

  /// Reverse sweep carrying (adjoint, adjoint-tangent) pairs. After it,
  /// adjoint_tangent(leaf) holds the Hessian-vector product row for `leaf`
  /// along the seeded tangent direction.
  void backward_dual(NodeId out, const std::vector<NodeId>& wrt);
  const Mat& adjoint_tangent(NodeId leaf) const;

  bool value_finite(NodeId n) const { return val_[n.idx].isFinite().all(); }
  std::string describe(NodeId n) const;

 private:
  struct Node {
    Op op;
    NodeId a, b;
    int rows = 0, cols = 0;
    std::shared_ptr<const Mat> cdata;
    std::shared_ptr<const IdxMat> idx;
    double alpha = 1.0, beta = 0.0;
    int ipow = 0;
    std::string label;
  };

  NodeId push(Node n);
  NodeId unary(Op op, NodeId a, int rows, int cols);
  void check_same_shape(NodeId a, NodeId b, const char* what) const;
  const std::vector<char>& reach_mask(const std::vector<NodeId>& wrt);
  void ensure_grad_buffers();
  [[noreturn]] void throw_nonfinite(NodeId out) const;

  // Epoch-stamped accumulate-or-assign, avoiding buffer zeroing.
  template <bool kDual>
  void propagate(NodeId out, const std::vector<NodeId>& wrt);

  std::vector<Node> nodes_;
  std::vector<Mat> val_, adj_, tan_, adjtan_;
  std::vector<Mat> cache_;  // per-op caches (cos for sine activations)
  std::vector<std::uint64_t> adj_epoch_, tan_epoch_, adjtan_epoch_;
  std::uint64_t cur_adj_ = 0, cur_tan_ = 0, cur_adjtan_ = 0;
  std::map<std::vector<std::int32_t>, std::vector<char>> reach_cache_;
  bool buffers_ready_ = false;
};

// --- module-level operations -------------------------------------------

/// Value and gradient of a recorded scalar function at the current leaf
/// values (forward + reverse sweep).
std::pair<double, Mat> grad(Tape& tape, NodeId out, NodeId wrt_leaf);

/// Hessian-vector product (forward-over-reverse). Assumes forward() state is
/// current for the leaf values of interest.
Mat hvp(Tape& tape, NodeId out, NodeId wrt_leaf, const Mat& direction);

/// K-step inner gradient-descent map: latent <- latent - alpha * dL/dlatent,
/// starting from zero, recorded against `inner_loss`.
struct InnerLoop {
  NodeId inner_loss;
  NodeId latent;
  double alpha = 1e-2;
  int steps = 0;
};

struct UnrolledResult {
  double outer_value = 0.0;
  double inner_value = 0.0;              // loss at the final latent
  std::vector<Mat> grads;                // one per wrt leaf
  std::vector<Eigen::VectorXd> latent_path;  // l_0 .. l_K
};

/// Exact gradient of outer(params, l_K(params)) through all K inner steps.
/// Second-order terms enter via one Hessian-vector replay per inner step;
/// `first_order` drops them and treats the final latent as constant.
UnrolledResult unrolled_grad(Tape& tape, const InnerLoop& inner, NodeId outer,
                             const std::vector<NodeId>& wrt, bool first_order = false);

}  // namespace ifol
