#include "ifol/tape.hpp"

#include <algorithm>
#include <cmath>

#include "ifol/simd_math.hpp"

namespace ifol {

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Input: return "input";
    case Op::Var: return "var";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::MulConst: return "mul_const";
    case Op::AddConst: return "add_const";
    case Op::Affine: return "affine";
    case Op::AddColVec: return "add_colvec";
    case Op::MatMul: return "matmul";
    case Op::SirenAct: return "siren_act";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::PowI: return "pow_int";
    case Op::Pow: return "pow";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::ColSum: return "col_sum";
    case Op::Gather: return "gather";
    case Op::Reshape: return "reshape";
    case Op::Dot: return "dot";
    case Op::StopGrad: return "stop_grad";
  }
  return "?";
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  buffers_ready_ = false;  // buffers re-extend lazily; reach masks reset
  return {static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::check_same_shape(NodeId a, NodeId b, const char* what) const {
  if (rows(a) != rows(b) || cols(a) != cols(b))
    throw Error(std::string("tape: shape mismatch in ") + what);
}

NodeId Tape::constant(Mat value, std::string label) {
  return constant(std::make_shared<const Mat>(std::move(value)), std::move(label));
}

NodeId Tape::constant(std::shared_ptr<const Mat> value, std::string label) {
  Node n;
  n.op = Op::Const;
  n.rows = static_cast<int>(value->rows());
  n.cols = static_cast<int>(value->cols());
  n.cdata = std::move(value);
  n.label = std::move(label);
  return push(std::move(n));
}

NodeId Tape::input(int rows, int cols, std::string label) {
  Node n;
  n.op = Op::Input;
  n.rows = rows;
  n.cols = cols;
  n.label = std::move(label);
  return push(std::move(n));
}

NodeId Tape::var(int rows, int cols, std::string label) {
  Node n;
  n.op = Op::Var;
  n.rows = rows;
  n.cols = cols;
  n.label = std::move(label);
  return push(std::move(n));
}

NodeId Tape::unary(Op op, NodeId a, int r, int c) {
  Node n;
  n.op = op;
  n.a = a;
  n.rows = r;
  n.cols = c;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_same_shape(a, b, "add");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.rows = rows(a);
  n.cols = cols(a);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_same_shape(a, b, "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.rows = rows(a);
  n.cols = cols(a);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_same_shape(a, b, "mul");
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.rows = rows(a);
  n.cols = cols(a);
  return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
  check_same_shape(a, b, "div");
  Node n;
  n.op = Op::Div;
  n.a = a;
  n.b = b;
  n.rows = rows(a);
  n.cols = cols(a);
  return push(std::move(n));
}

NodeId Tape::neg(NodeId a) { return unary(Op::Neg, a, rows(a), cols(a)); }

NodeId Tape::mul_const(NodeId a, std::shared_ptr<const Mat> c) {
  if (rows(a) != c->rows() || cols(a) != c->cols())
    throw Error("tape: shape mismatch in mul_const");
  Node n;
  n.op = Op::MulConst;
  n.a = a;
  n.rows = rows(a);
  n.cols = cols(a);
  n.cdata = std::move(c);
  return push(std::move(n));
}

NodeId Tape::add_const(NodeId a, std::shared_ptr<const Mat> c) {
  if (rows(a) != c->rows() || cols(a) != c->cols())
    throw Error("tape: shape mismatch in add_const");
  Node n;
  n.op = Op::AddConst;
  n.a = a;
  n.rows = rows(a);
  n.cols = cols(a);
  n.cdata = std::move(c);
  return push(std::move(n));
}

NodeId Tape::affine(NodeId a, double alpha, double beta) {
  Node n;
  n.op = Op::Affine;
  n.a = a;
  n.rows = rows(a);
  n.cols = cols(a);
  n.alpha = alpha;
  n.beta = beta;
  return push(std::move(n));
}

NodeId Tape::add_colvec(NodeId mat, NodeId colvec) {
  if (cols(colvec) != 1 || rows(colvec) != rows(mat))
    throw Error("tape: add_colvec needs a rows(mat) x 1 vector");
  Node n;
  n.op = Op::AddColVec;
  n.a = mat;
  n.b = colvec;
  n.rows = rows(mat);
  n.cols = cols(mat);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  if (cols(a) != rows(b)) throw Error("tape: matmul inner dimensions differ");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.rows = rows(a);
  n.cols = cols(b);
  return push(std::move(n));
}

NodeId Tape::siren_act(NodeId pre, NodeId shift, double omega0) {
  if (cols(shift) != 1 || rows(shift) != rows(pre))
    throw Error("tape: siren_act shift must be rows(pre) x 1");
  Node n;
  n.op = Op::SirenAct;
  n.a = pre;
  n.b = shift;
  n.rows = rows(pre);
  n.cols = cols(pre);
  n.alpha = omega0;
  return push(std::move(n));
}

NodeId Tape::sin(NodeId a) { return unary(Op::Sin, a, rows(a), cols(a)); }
NodeId Tape::cos(NodeId a) { return unary(Op::Cos, a, rows(a), cols(a)); }
NodeId Tape::exp(NodeId a) { return unary(Op::Exp, a, rows(a), cols(a)); }
NodeId Tape::log(NodeId a) { return unary(Op::Log, a, rows(a), cols(a)); }
NodeId Tape::square(NodeId a) { return unary(Op::Square, a, rows(a), cols(a)); }

NodeId Tape::pow_int(NodeId a, int p) {
  Node n;
  n.op = Op::PowI;
  n.a = a;
  n.rows = rows(a);
  n.cols = cols(a);
  n.ipow = p;
  return push(std::move(n));
}

NodeId Tape::pow(NodeId a, double p) {
  Node n;
  n.op = Op::Pow;
  n.a = a;
  n.rows = rows(a);
  n.cols = cols(a);
  n.alpha = p;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) { return unary(Op::Sum, a, 1, 1); }
NodeId Tape::row_sum(NodeId a) { return unary(Op::RowSum, a, 1, cols(a)); }
NodeId Tape::col_sum(NodeId a) { return unary(Op::ColSum, a, rows(a), 1); }

NodeId Tape::gather(NodeId vec, std::shared_ptr<const IdxMat> idx) {
  if (cols(vec) != 1) throw Error("tape: gather input must be a column vector");
  const int m = rows(vec);
  for (int j = 0; j < idx->cols(); ++j)
    for (int i = 0; i < idx->rows(); ++i)
      if ((*idx)(i, j) < 0 || (*idx)(i, j) >= m)
        throw Error("tape: gather index out of range");
  Node n;
  n.op = Op::Gather;
  n.a = vec;
  n.rows = static_cast<int>(idx->rows());
  n.cols = static_cast<int>(idx->cols());
  n.idx = std::move(idx);
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, int r, int c) {
  if (r * c != rows(a) * cols(a)) throw Error("tape: reshape size mismatch");
  return unary(Op::Reshape, a, r, c);
}

NodeId Tape::dot(NodeId a, NodeId b) {
  check_same_shape(a, b, "dot");
  Node n;
  n.op = Op::Dot;
  n.a = a;
  n.b = b;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Tape::stop_grad(NodeId a) { return unary(Op::StopGrad, a, rows(a), cols(a)); }

void Tape::ensure_grad_buffers() {
  if (buffers_ready_) return;
  const size_t old_n = val_.size();
  const size_t n = nodes_.size();
  val_.resize(n);
  adj_.resize(n);
  tan_.resize(n);
  adjtan_.resize(n);
  cache_.resize(n);
  adj_epoch_.resize(n, 0);
  tan_epoch_.resize(n, 0);
  adjtan_epoch_.resize(n, 0);
  for (size_t i = old_n; i < n; ++i)
    if (nodes_[i].op == Op::Const) val_[i] = *nodes_[i].cdata;
  reach_cache_.clear();
  buffers_ready_ = true;
}

void Tape::set_value(NodeId leaf, const Mat& v) {
  ensure_grad_buffers();
  const Node& n = nodes_[leaf.idx];
  if (n.op != Op::Input && n.op != Op::Var)
    throw Error("tape: set_value on a non-leaf node");
  if (v.rows() != n.rows || v.cols() != n.cols)
    throw Error("tape: set_value shape mismatch for " + describe(leaf));
  val_[leaf.idx] = v;
}

std::string Tape::describe(NodeId n) const {
  const Node& nd = nodes_[n.idx];
  std::string s = "node #" + std::to_string(n.idx) + " " + op_name(nd.op);
  if (!nd.label.empty()) s += " '" + nd.label + "'";
  s += " (" + std::to_string(nd.rows) + "x" + std::to_string(nd.cols) + ")";
  return s;
}

void Tape::throw_nonfinite(NodeId out) const {
  for (std::int32_t i = 0; i <= out.idx; ++i)
    if (val_[i].size() > 0 && !val_[i].isFinite().all())
      throw NumericalError("non-finite value during forward evaluation at " +
                           describe({i}));
  throw NumericalError("non-finite value during forward evaluation");
}

double Tape::scalar(NodeId out) const {
  if (rows(out) != 1 || cols(out) != 1)
    throw Error("tape: scalar() on a non-scalar node");
  const double v = val_[out.idx](0, 0);
  if (!std::isfinite(v)) throw_nonfinite(out);
  return v;
}

void Tape::forward() {
  ensure_grad_buffers();
  static thread_local Mat scratch;
  const int n = static_cast<int>(nodes_.size());
  for (int i = 0; i < n; ++i) {
    const Node& nd = nodes_[i];
    Mat& out = val_[i];
    switch (nd.op) {
      case Op::Const:
      case Op::Input:
      case Op::Var:
        if (out.size() == 0)
          throw Error("tape: leaf value never set: " + describe({i}));
        break;
      case Op::Add: out = val_[nd.a.idx] + val_[nd.b.idx]; break;
      case Op::Sub: out = val_[nd.a.idx] - val_[nd.b.idx]; break;
      case Op::Mul: out = val_[nd.a.idx] * val_[nd.b.idx]; break;
      case Op::Div: out = val_[nd.a.idx] / val_[nd.b.idx]; break;
      case Op::Neg: out = -val_[nd.a.idx]; break;
      case Op::MulConst: out = val_[nd.a.idx] * (*nd.cdata); break;
      case Op::AddConst: out = val_[nd.a.idx] + (*nd.cdata); break;
      case Op::Affine: out = nd.alpha * val_[nd.a.idx] + nd.beta; break;
      case Op::AddColVec:
        out = val_[nd.a.idx].colwise() + val_[nd.b.idx].col(0);
        break;
      case Op::MatMul:
        out.resize(nd.rows, nd.cols);
        out.matrix().noalias() = val_[nd.a.idx].matrix() * val_[nd.b.idx].matrix();
        break;
      case Op::SirenAct: {
        scratch = nd.alpha * (val_[nd.a.idx].colwise() + val_[nd.b.idx].col(0));
        out.resize(nd.rows, nd.cols);
        cache_[i].resize(nd.rows, nd.cols);
        vecmath::sincos(scratch.data(), out.data(), cache_[i].data(),
                        static_cast<size_t>(scratch.size()));
        break;
      }
      case Op::Sin: {
        scratch = val_[nd.a.idx];
        out.resize(nd.rows, nd.cols);
        cache_[i].resize(nd.rows, nd.cols);
        vecmath::sincos(scratch.data(), out.data(), cache_[i].data(),
                        static_cast<size_t>(scratch.size()));
        break;
      }
      case Op::Cos: {
        scratch = val_[nd.a.idx];
        out.resize(nd.rows, nd.cols);
        cache_[i].resize(nd.rows, nd.cols);
        // cache holds sin for the reverse rule
        vecmath::sincos(scratch.data(), cache_[i].data(), out.data(),
                        static_cast<size_t>(scratch.size()));
        break;
      }
      case Op::Exp: out = val_[nd.a.idx].exp(); break;
      case Op::Log: out = val_[nd.a.idx].log(); break;
      case Op::Square: out = val_[nd.a.idx].square(); break;
      case Op::PowI: {
        const Mat& a = val_[nd.a.idx];
        switch (nd.ipow) {
          case 2: out = a.square(); break;
          case 3: out = a.square() * a; break;
          case 4: out = a.square().square(); break;
          default: out = a.pow(nd.ipow);
        }
        break;
      }
      case Op::Pow: out = val_[nd.a.idx].pow(nd.alpha); break;
      case Op::Sum:
        out.resize(1, 1);
        out(0, 0) = val_[nd.a.idx].sum();
        break;
      case Op::RowSum: out = val_[nd.a.idx].colwise().sum(); break;
      case Op::ColSum: out = val_[nd.a.idx].rowwise().sum(); break;
      case Op::Gather: {
        const Mat& v = val_[nd.a.idx];
        const IdxMat& ix = *nd.idx;
        out.resize(nd.rows, nd.cols);
        for (int j = 0; j < nd.cols; ++j)
          for (int r = 0; r < nd.rows; ++r) out(r, j) = v(ix(r, j), 0);
        break;
      }
      case Op::Reshape: {
        const Mat& a = val_[nd.a.idx];
        out = Eigen::Map<const Mat>(a.data(), nd.rows, nd.cols);
        break;
      }
      case Op::Dot:
        out.resize(1, 1);
        out(0, 0) = (val_[nd.a.idx] * val_[nd.b.idx]).sum();
        break;
      case Op::StopGrad: out = val_[nd.a.idx]; break;
    }
  }
}

const std::vector<char>& Tape::reach_mask(const std::vector<NodeId>& wrt) {
  std::vector<std::int32_t> key;
  key.reserve(wrt.size());
  for (NodeId w : wrt) key.push_back(w.idx);
  std::sort(key.begin(), key.end());
  auto it = reach_cache_.find(key);
  if (it != reach_cache_.end()) return it->second;

  std::vector<char> up(nodes_.size(), 0);
  for (NodeId w : wrt) {
    const Op op = nodes_[w.idx].op;
    if (op != Op::Var && op != Op::Input)
      throw Error("tape: gradient target must be a leaf: " + describe(w));
    up[w.idx] = 1;
  }
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& nd = nodes_[i];
    if (nd.op == Op::StopGrad || nd.op == Op::Const) continue;
    if (up[i]) continue;
    bool r = false;
    if (nd.a.valid()) r = r || up[nd.a.idx];
    if (nd.b.valid()) r = r || up[nd.b.idx];
    up[i] = r ? 1 : 0;
  }
  return reach_cache_.emplace(std::move(key), std::move(up)).first->second;
}

namespace {

// Accumulate-or-assign keyed on an epoch stamp, so adjoint buffers never
// need a zeroing pass.
template <class E>
inline void accum(Mat& buf, std::uint64_t& ep, std::uint64_t cur, const E& e) {
  if (ep != cur) {
    buf = e;
    ep = cur;
  } else {
    buf += e;
  }
}

template <class A, class B>
inline void accum_mm(Mat& buf, std::uint64_t& ep, std::uint64_t cur, int r, int c,
                     const A& a, const B& b) {
  if (ep != cur) {
    buf.resize(r, c);
    buf.matrix().noalias() = a * b;
    ep = cur;
  } else {
    buf.matrix().noalias() += a * b;
  }
}

}  // namespace

void Tape::set_tangent(NodeId leaf, const Mat& t) {
  ensure_grad_buffers();
  const Node& n = nodes_[leaf.idx];
  if (n.op != Op::Input && n.op != Op::Var)
    throw Error("tape: set_tangent on a non-leaf node");
  if (t.rows() != n.rows || t.cols() != n.cols)
    throw Error("tape: set_tangent shape mismatch");
  tan_[leaf.idx] = t;
  tan_epoch_[leaf.idx] = cur_tan_ + 1;
}

void Tape::forward_tangent() {
  ++cur_tan_;
  const std::uint64_t cur = cur_tan_;
  auto fresh = [&](NodeId id) { return id.valid() && tan_epoch_[id.idx] == cur; };
  const int n = static_cast<int>(nodes_.size());
  for (int i = 0; i < n; ++i) {
    const Node& nd = nodes_[i];
    if (nd.op == Op::Const || nd.op == Op::Input || nd.op == Op::Var ||
        nd.op == Op::StopGrad)
      continue;
    const bool fa = fresh(nd.a);
    const bool fb = fresh(nd.b);
    if (!fa && !fb) continue;
    Mat& t = tan_[i];
    tan_epoch_[i] = cur;
    switch (nd.op) {
      case Op::Add:
        if (fa && fb) t = tan_[nd.a.idx] + tan_[nd.b.idx];
        else t = fa ? tan_[nd.a.idx] : tan_[nd.b.idx];
        break;
      case Op::Sub:
        if (fa && fb) t = tan_[nd.a.idx] - tan_[nd.b.idx];
        else if (fa) t = tan_[nd.a.idx];
        else t = -tan_[nd.b.idx];
        break;
      case Op::Mul:
        if (fa && fb) t = tan_[nd.a.idx] * val_[nd.b.idx] + val_[nd.a.idx] * tan_[nd.b.idx];
        else if (fa) t = tan_[nd.a.idx] * val_[nd.b.idx];
        else t = val_[nd.a.idx] * tan_[nd.b.idx];
        break;
      case Op::Div: {
        const Mat& b = val_[nd.b.idx];
        if (fa && fb) t = (tan_[nd.a.idx] - val_[i] * tan_[nd.b.idx]) / b;
        else if (fa) t = tan_[nd.a.idx] / b;
        else t = -(val_[i] * tan_[nd.b.idx]) / b;
        break;
      }
      case Op::Neg: t = -tan_[nd.a.idx]; break;
      case Op::MulConst: t = tan_[nd.a.idx] * (*nd.cdata); break;
      case Op::AddConst: t = tan_[nd.a.idx]; break;
      case Op::Affine: t = nd.alpha * tan_[nd.a.idx]; break;
      case Op::AddColVec:
        if (fa && fb) t = tan_[nd.a.idx].colwise() + tan_[nd.b.idx].col(0);
        else if (fa) t = tan_[nd.a.idx];
        else t = Mat::Zero(nd.rows, nd.cols).colwise() + tan_[nd.b.idx].col(0);
        break;
      case Op::MatMul:
        t.resize(nd.rows, nd.cols);
        if (fa) {
          t.matrix().noalias() = tan_[nd.a.idx].matrix() * val_[nd.b.idx].matrix();
          if (fb) t.matrix().noalias() += val_[nd.a.idx].matrix() * tan_[nd.b.idx].matrix();
        } else {
          t.matrix().noalias() = val_[nd.a.idx].matrix() * tan_[nd.b.idx].matrix();
        }
        break;
      case Op::SirenAct: {
        // d sin(w(x+s)) = w cos(.) (dx + ds)
        const Mat& cosv = cache_[i];
        if (fa && fb) t = nd.alpha * cosv * (tan_[nd.a.idx].colwise() + tan_[nd.b.idx].col(0));
        else if (fa) t = nd.alpha * cosv * tan_[nd.a.idx];
        else t = nd.alpha * (cosv.colwise() * tan_[nd.b.idx].col(0));
        break;
      }
      case Op::Sin: t = cache_[i] * tan_[nd.a.idx]; break;
      case Op::Cos: t = -cache_[i] * tan_[nd.a.idx]; break;
      case Op::Exp: t = val_[i] * tan_[nd.a.idx]; break;
      case Op::Log: t = tan_[nd.a.idx] / val_[nd.a.idx]; break;
      case Op::Square: t = 2.0 * val_[nd.a.idx] * tan_[nd.a.idx]; break;
      case Op::PowI: {
        const Mat& a = val_[nd.a.idx];
        const int p = nd.ipow;
        switch (p) {
          case 2: t = 2.0 * a * tan_[nd.a.idx]; break;
          case 3: t = 3.0 * a.square() * tan_[nd.a.idx]; break;
          case 4: t = 4.0 * a.square() * a * tan_[nd.a.idx]; break;
          default: t = static_cast<double>(p) * a.pow(p - 1) * tan_[nd.a.idx];
        }
        break;
      }
      case Op::Pow:
        t = nd.alpha * val_[nd.a.idx].pow(nd.alpha - 1.0) * tan_[nd.a.idx];
        break;
      case Op::Sum:
        t.resize(1, 1);
        t(0, 0) = tan_[nd.a.idx].sum();
        break;
      case Op::RowSum: t = tan_[nd.a.idx].colwise().sum(); break;
      case Op::ColSum: t = tan_[nd.a.idx].rowwise().sum(); break;
      case Op::Gather: {
        const Mat& v = tan_[nd.a.idx];
        const IdxMat& ix = *nd.idx;
        t.resize(nd.rows, nd.cols);
        for (int j = 0; j < nd.cols; ++j)
          for (int r = 0; r < nd.rows; ++r) t(r, j) = v(ix(r, j), 0);
        break;
      }
      case Op::Reshape:
        t = Eigen::Map<const Mat>(tan_[nd.a.idx].data(), nd.rows, nd.cols);
        break;
      case Op::Dot: {
        t.resize(1, 1);
        double s = 0.0;
        if (fa) s += (tan_[nd.a.idx] * val_[nd.b.idx]).sum();
        if (fb) s += (val_[nd.a.idx] * tan_[nd.b.idx]).sum();
        t(0, 0) = s;
        break;
      }
      default: throw Error("tape: tangent rule missing for op");
    }
  }
}

template <bool kDual>
void Tape::propagate(NodeId out, const std::vector<NodeId>& wrt) {
  ensure_grad_buffers();
  const std::vector<char>& up = reach_mask(wrt);
  ++cur_adj_;
  if constexpr (kDual) ++cur_adjtan_;
  const std::uint64_t cg = cur_adj_;
  const std::uint64_t cd = cur_adjtan_;

  if (rows(out) != 1 || cols(out) != 1)
    throw Error("tape: backward output must be scalar");
  adj_[out.idx] = Mat::Ones(1, 1);
  adj_epoch_[out.idx] = cg;
  if constexpr (kDual) {
    adjtan_[out.idx] = Mat::Zero(1, 1);
    adjtan_epoch_[out.idx] = cd;
  }

  auto has_tan = [&](NodeId id) {
    return id.valid() && tan_epoch_[id.idx] == cur_tan_;
  };

  for (std::int32_t i = out.idx; i >= 0; --i) {
    if (adj_epoch_[i] != cg) continue;
    const Node& nd = nodes_[i];
    if (nd.op == Op::Const || nd.op == Op::Input || nd.op == Op::Var ||
        nd.op == Op::StopGrad)
      continue;
    const Mat& g = adj_[i];
    const bool wa = nd.a.valid() && up[nd.a.idx];
    const bool wb = nd.b.valid() && up[nd.b.idx];
    if (!wa && !wb) continue;

    // gd is only touched in the dual instantiation.
    const Mat* gd = nullptr;
    if constexpr (kDual) {
      if (adjtan_epoch_[i] != cd) {
        adjtan_[i] = Mat::Zero(nd.rows, nd.cols);
        adjtan_epoch_[i] = cd;
      }
      gd = &adjtan_[i];
    }

    auto acc_a = [&](const auto& e) { accum(adj_[nd.a.idx], adj_epoch_[nd.a.idx], cg, e); };
    auto acc_b = [&](const auto& e) { accum(adj_[nd.b.idx], adj_epoch_[nd.b.idx], cg, e); };
    auto accd_a = [&](const auto& e) {
      if constexpr (kDual) accum(adjtan_[nd.a.idx], adjtan_epoch_[nd.a.idx], cd, e);
    };
    auto accd_b = [&](const auto& e) {
      if constexpr (kDual) accum(adjtan_[nd.b.idx], adjtan_epoch_[nd.b.idx], cd, e);
    };

    switch (nd.op) {
      case Op::Add:
        if (wa) { acc_a(g); if constexpr (kDual) accd_a(*gd); }
        if (wb) { acc_b(g); if constexpr (kDual) accd_b(*gd); }
        break;
      case Op::Sub:
        if (wa) { acc_a(g); if constexpr (kDual) accd_a(*gd); }
        if (wb) { acc_b(-g); if constexpr (kDual) accd_b(-*gd); }
        break;
      case Op::Mul: {
        const Mat& av = val_[nd.a.idx];
        const Mat& bv = val_[nd.b.idx];
        if (wa) {
          acc_a(g * bv);
          if constexpr (kDual) {
            if (has_tan(nd.b)) accd_a(*gd * bv + g * tan_[nd.b.idx]);
            else accd_a(*gd * bv);
          }
        }
        if (wb) {
          acc_b(g * av);
          if constexpr (kDual) {
            if (has_tan(nd.a)) accd_b(*gd * av + g * tan_[nd.a.idx]);
            else accd_b(*gd * av);
          }
        }
        break;
      }
      case Op::Div: {
        const Mat& av = val_[nd.a.idx];
        const Mat& bv = val_[nd.b.idx];
        if (wa) {
          acc_a(g / bv);
          if constexpr (kDual) {
            if (has_tan(nd.b)) accd_a(*gd / bv - g * tan_[nd.b.idx] / bv.square());
            else accd_a(*gd / bv);
          }
        }
        if (wb) {
          acc_b(-g * av / bv.square());
          if constexpr (kDual) {
            Mat term = -*gd * av / bv.square();
            if (has_tan(nd.a)) term -= g * tan_[nd.a.idx] / bv.square();
            if (has_tan(nd.b)) term += 2.0 * g * av * tan_[nd.b.idx] / (bv.square() * bv);
            accd_b(term);
          }
        }
        break;
      }
      case Op::Neg:
        acc_a(-g);
        if constexpr (kDual) accd_a(-*gd);
        break;
      case Op::MulConst:
        acc_a(g * (*nd.cdata));
        if constexpr (kDual) accd_a(*gd * (*nd.cdata));
        break;
      case Op::AddConst:
        acc_a(g);
        if constexpr (kDual) accd_a(*gd);
        break;
      case Op::Affine:
        acc_a(nd.alpha * g);
        if constexpr (kDual) accd_a(nd.alpha * *gd);
        break;
      case Op::AddColVec:
        if (wa) { acc_a(g); if constexpr (kDual) accd_a(*gd); }
        if (wb) {
          acc_b(g.rowwise().sum());
          if constexpr (kDual) accd_b(gd->rowwise().sum());
        }
        break;
      case Op::MatMul: {
        const Mat& av = val_[nd.a.idx];
        const Mat& bv = val_[nd.b.idx];
        if (wa) {
          accum_mm(adj_[nd.a.idx], adj_epoch_[nd.a.idx], cg, rows(nd.a),
                   cols(nd.a), g.matrix(), bv.matrix().transpose());
          if constexpr (kDual) {
            accum_mm(adjtan_[nd.a.idx], adjtan_epoch_[nd.a.idx], cd, rows(nd.a),
                     cols(nd.a), gd->matrix(), bv.matrix().transpose());
            if (has_tan(nd.b))
              adjtan_[nd.a.idx].matrix().noalias() +=
                  g.matrix() * tan_[nd.b.idx].matrix().transpose();
          }
        }
        if (wb) {
          accum_mm(adj_[nd.b.idx], adj_epoch_[nd.b.idx], cg, rows(nd.b), cols(nd.b),
                   av.matrix().transpose(), g.matrix());
          if constexpr (kDual) {
            accum_mm(adjtan_[nd.b.idx], adjtan_epoch_[nd.b.idx], cd, rows(nd.b),
                     cols(nd.b), av.matrix().transpose(), gd->matrix());
            if (has_tan(nd.a))
              adjtan_[nd.b.idx].matrix().noalias() +=
                  tan_[nd.a.idx].matrix().transpose() * g.matrix();
          }
        }
        break;
      }
      case Op::SirenAct: {
        const double w0 = nd.alpha;
        const Mat& cosv = cache_[i];
        Mat base = g * (w0 * cosv);
        if (wa) acc_a(base);
        if (wb) acc_b(base.rowwise().sum());
        if constexpr (kDual) {
          // d/de [w cos(pre)] = -w^2 sin(pre) (dx + ds); sin(pre) is the value.
          Mat dbase = *gd * (w0 * cosv);
          const bool ta = has_tan(nd.a);
          const bool tb = has_tan(nd.b);
          if (ta || tb) {
            Mat pre_dot;
            if (ta && tb) pre_dot = tan_[nd.a.idx].colwise() + tan_[nd.b.idx].col(0);
            else if (ta) pre_dot = tan_[nd.a.idx];
            else pre_dot = Mat::Zero(nd.rows, nd.cols).colwise() + tan_[nd.b.idx].col(0);
            dbase -= g * (w0 * w0 * val_[i]) * pre_dot;
          }
          if (wa) accd_a(dbase);
          if (wb) accd_b(dbase.rowwise().sum());
        }
        break;
      }
      case Op::Sin: {
        const Mat& cosv = cache_[i];
        acc_a(g * cosv);
        if constexpr (kDual) {
          if (has_tan(nd.a)) accd_a(*gd * cosv - g * val_[i] * tan_[nd.a.idx]);
          else accd_a(*gd * cosv);
        }
        break;
      }
      case Op::Cos: {
        const Mat& sinv = cache_[i];
        acc_a(-g * sinv);
        if constexpr (kDual) {
          if (has_tan(nd.a)) accd_a(-*gd * sinv - g * val_[i] * tan_[nd.a.idx]);
          else accd_a(-*gd * sinv);
        }
        break;
      }
      case Op::Exp: {
        const Mat& ev = val_[i];
        acc_a(g * ev);
        if constexpr (kDual) {
          if (has_tan(nd.a)) accd_a(*gd * ev + g * ev * tan_[nd.a.idx]);
          else accd_a(*gd * ev);
        }
        break;
      }
      case Op::Log: {
        const Mat& av = val_[nd.a.idx];
        acc_a(g / av);
        if constexpr (kDual) {
          if (has_tan(nd.a)) accd_a(*gd / av - g * tan_[nd.a.idx] / av.square());
          else accd_a(*gd / av);
        }
        break;
      }
      case Op::Square: {
        const Mat& av = val_[nd.a.idx];
        acc_a(2.0 * g * av);
        if constexpr (kDual) {
          if (has_tan(nd.a)) accd_a(2.0 * (*gd * av + g * tan_[nd.a.idx]));
          else accd_a(2.0 * *gd * av);
        }
        break;
      }
      case Op::PowI: {
        const Mat& av = val_[nd.a.idx];
        const double p = nd.ipow;
        Mat am1 = nd.ipow == 2 ? Mat(av) : (nd.ipow == 3 ? Mat(av.square())
                  : (nd.ipow == 4 ? Mat(av.square() * av) : Mat(av.pow(nd.ipow - 1))));
        acc_a(p * g * am1);
        if constexpr (kDual) {
          if (has_tan(nd.a)) {
            Mat am2 = nd.ipow == 2 ? Mat(Mat::Ones(nd.rows, nd.cols))
                      : (nd.ipow == 3 ? Mat(av) : (nd.ipow == 4 ? Mat(av.square())
                      : Mat(av.pow(nd.ipow - 2))));
            accd_a(p * (*gd * am1 + (p - 1.0) * g * am2 * tan_[nd.a.idx]));
          } else {
            accd_a(p * *gd * am1);
          }
        }
        break;
      }
      case Op::Pow: {
        const Mat& av = val_[nd.a.idx];
        const double p = nd.alpha;
        Mat am1 = av.pow(p - 1.0);
        acc_a(p * g * am1);
        if constexpr (kDual) {
          if (has_tan(nd.a))
            accd_a(p * (*gd * am1 + (p - 1.0) * g * av.pow(p - 2.0) * tan_[nd.a.idx]));
          else accd_a(p * *gd * am1);
        }
        break;
      }
      case Op::Sum: {
        const double gs = g(0, 0);
        acc_a(Mat::Constant(rows(nd.a), cols(nd.a), gs));
        if constexpr (kDual)
          accd_a(Mat::Constant(rows(nd.a), cols(nd.a), (*gd)(0, 0)));
        break;
      }
      case Op::RowSum: {
        // g is 1 x c, broadcast down rows
        acc_a(Mat::Zero(rows(nd.a), cols(nd.a)).rowwise() + g.row(0));
        if constexpr (kDual)
          accd_a(Mat::Zero(rows(nd.a), cols(nd.a)).rowwise() + gd->row(0));
        break;
      }
      case Op::ColSum: {
        acc_a(Mat::Zero(rows(nd.a), cols(nd.a)).colwise() + g.col(0));
        if constexpr (kDual)
          accd_a(Mat::Zero(rows(nd.a), cols(nd.a)).colwise() + gd->col(0));
        break;
      }
      case Op::Gather: {
        const IdxMat& ix = *nd.idx;
        Mat& da = adj_[nd.a.idx];
        if (adj_epoch_[nd.a.idx] != cg) {
          da = Mat::Zero(rows(nd.a), 1);
          adj_epoch_[nd.a.idx] = cg;
        }
        for (int j = 0; j < nd.cols; ++j)
          for (int r = 0; r < nd.rows; ++r) da(ix(r, j), 0) += g(r, j);
        if constexpr (kDual) {
          Mat& dd = adjtan_[nd.a.idx];
          if (adjtan_epoch_[nd.a.idx] != cd) {
            dd = Mat::Zero(rows(nd.a), 1);
            adjtan_epoch_[nd.a.idx] = cd;
          }
          for (int j = 0; j < nd.cols; ++j)
            for (int r = 0; r < nd.rows; ++r) dd(ix(r, j), 0) += (*gd)(r, j);
        }
        break;
      }
      case Op::Reshape:
        acc_a(Eigen::Map<const Mat>(g.data(), rows(nd.a), cols(nd.a)));
        if constexpr (kDual)
          accd_a(Eigen::Map<const Mat>(gd->data(), rows(nd.a), cols(nd.a)));
        break;
      case Op::Dot: {
        const double gs = g(0, 0);
        if (wa) {
          acc_a(gs * val_[nd.b.idx]);
          if constexpr (kDual) {
            if (has_tan(nd.b)) accd_a((*gd)(0, 0) * val_[nd.b.idx] + gs * tan_[nd.b.idx]);
            else accd_a((*gd)(0, 0) * val_[nd.b.idx]);
          }
        }
        if (wb) {
          acc_b(gs * val_[nd.a.idx]);
          if constexpr (kDual) {
            if (has_tan(nd.a)) accd_b((*gd)(0, 0) * val_[nd.a.idx] + gs * tan_[nd.a.idx]);
            else accd_b((*gd)(0, 0) * val_[nd.a.idx]);
          }
        }
        break;
      }
      default:
        throw Error("tape: reverse rule missing for op");
    }
  }

  // Leaves never reached keep stale epochs; expose them as zeros.
  for (NodeId w : wrt) {
    if (adj_epoch_[w.idx] != cg) {
      adj_[w.idx] = Mat::Zero(rows(w), cols(w));
      adj_epoch_[w.idx] = cg;
    }
    if constexpr (kDual) {
      if (adjtan_epoch_[w.idx] != cd) {
        adjtan_[w.idx] = Mat::Zero(rows(w), cols(w));
        adjtan_epoch_[w.idx] = cd;
      }
    }
  }
}

void Tape::backward(NodeId out, const std::vector<NodeId>& wrt) {
  propagate<false>(out, wrt);
}

void Tape::backward_dual(NodeId out, const std::vector<NodeId>& wrt) {
  propagate<true>(out, wrt);
}

const Mat& Tape::adjoint(NodeId leaf) const { return adj_[leaf.idx]; }
const Mat& Tape::adjoint_tangent(NodeId leaf) const { return adjtan_[leaf.idx]; }

std::pair<double, Mat> grad(Tape& tape, NodeId out, NodeId wrt_leaf) {
  tape.forward();
  const double v = tape.scalar(out);
  tape.backward(out, {wrt_leaf});
  return {v, tape.adjoint(wrt_leaf)};
}

Mat hvp(Tape& tape, NodeId out, NodeId wrt_leaf, const Mat& direction) {
  tape.set_tangent(wrt_leaf, direction);
  tape.forward_tangent();
  tape.backward_dual(out, {wrt_leaf});
  return tape.adjoint_tangent(wrt_leaf);
}

UnrolledResult unrolled_grad(Tape& tape, const InnerLoop& inner, NodeId outer,
                             const std::vector<NodeId>& wrt, bool first_order) {
  const int latent_dim = tape.rows(inner.latent);
  if (tape.cols(inner.latent) != 1)
    throw Error("unrolled_grad: latent must be a column vector leaf");

  UnrolledResult res;
  Eigen::VectorXd l = Eigen::VectorXd::Zero(latent_dim);
  res.latent_path.push_back(l);

  // Inner loop (PDE encoding): plain gradient descent from zero.
  for (int j = 0; j < inner.steps; ++j) {
    tape.set_value(inner.latent, l);
    tape.forward();
    const double lv = tape.scalar(inner.inner_loss);
    if (!std::isfinite(lv))
      throw NumericalError("encode diverged at inner step " + std::to_string(j));
    tape.backward(inner.inner_loss, {inner.latent});
    l -= inner.alpha * tape.adjoint(inner.latent).matrix();
    if (!l.allFinite())
      throw NumericalError("encode diverged at inner step " + std::to_string(j));
    res.latent_path.push_back(l);
  }

  // Outer gradient at the adapted latent.
  tape.set_value(inner.latent, l);
  tape.forward();
  res.inner_value = tape.scalar(inner.inner_loss);
  res.outer_value = tape.scalar(outer);
  std::vector<NodeId> wrt_all = wrt;
  wrt_all.push_back(inner.latent);
  tape.backward(outer, wrt_all);
  res.grads.reserve(wrt.size());
  for (NodeId w : wrt) res.grads.push_back(tape.adjoint(w));
  Eigen::VectorXd p = tape.adjoint(inner.latent).matrix();

  if (!first_order) {
    // Reverse through the unrolled steps: each needs one Hessian-vector
    // replay of the inner loss at l_j along the incoming cotangent p.
    for (int j = inner.steps - 1; j >= 0; --j) {
      tape.set_value(inner.latent, res.latent_path[j]);
      tape.forward();
      tape.set_tangent(inner.latent, p);
      tape.forward_tangent();
      tape.backward_dual(inner.inner_loss, wrt_all);
      for (size_t w = 0; w < wrt.size(); ++w)
        res.grads[w] -= inner.alpha * tape.adjoint_tangent(wrt[w]);
      p -= inner.alpha * tape.adjoint_tangent(inner.latent).matrix();
    }
  }
  return res;
}

}  // namespace ifol
