#include "otfuse/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace otfuse {

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << "(" << m.rows() << "x" << m.cols() << ")";
  return os.str();
}

namespace ad {

namespace {

std::atomic<int> g_sign_flip{-1};

double fault_sign(OpKind kind) {
  return g_sign_flip.load(std::memory_order_relaxed) == static_cast<int>(kind) ? -1.0 : 1.0;
}

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                   shape_str(a));
}

// Expands b to a's shape according to the broadcast kind.
Mat expand(const Mat& b, Eigen::Index rows, Eigen::Index cols, Bcast k) {
  switch (k) {
    case Bcast::Same: return b;
    case Bcast::Scalar: return Mat::Constant(rows, cols, b(0, 0));
    case Bcast::Row: return b.replicate(rows, 1);
    case Bcast::Col: return b.replicate(1, cols);
  }
  return b;
}

// Sums g back down to the broadcast source shape.
Mat reduce_to(const Mat& g, Bcast k) {
  switch (k) {
    case Bcast::Same: return g;
    case Bcast::Scalar: return Mat::Constant(1, 1, g.sum());
    case Bcast::Row: return g.colwise().sum();
    case Bcast::Col: return g.rowwise().sum();
  }
  return g;
}

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("op on an empty Var");
  if (a.tape() != b.tape()) throw std::invalid_argument("op inputs live on different tapes");
  return *a.tape();
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::invalid_argument("op on an empty Var");
  return *a.tape();
}

Mat row_lse(const Mat& x) {
  Mat out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    if (!std::isfinite(m)) {
      out(i, 0) = m;
      continue;
    }
    out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::SoftmaxRow: return "softmax_rows";
    case OpKind::LogSumExpRow: return "logsumexp_rows";
    case OpKind::LogSumExpCol: return "logsumexp_cols";
    case OpKind::Sum: return "sum";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::Mean: return "mean";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::Clamp: return "clamp";
    case OpKind::Lerp: return "lerp";
  }
  return "unknown";
}

// ---- Var -------------------------------------------------------------------

const Mat& Var::value() const { return tape_->nodes_.at(id_).value; }

const Mat& Var::grad() const {
  auto& node = tape_->nodes_.at(id_);
  if (node.grad.size() == 0) node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

double Var::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on non-scalar " + shape_str(v));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

// ---- Tape ------------------------------------------------------------------

Var Tape::variable(Mat value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Mat value) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(Mat::Constant(1, 1, value)); }

Var Tape::record(OpKind kind, Mat value, std::vector<std::size_t> inputs, double p0, double p1) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.p0 = p0;
  n.p1 = p1;
  for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_.at(in).requires_grad;
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.resize(0, 0);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss lives on another tape");
  const Mat& lv = nodes_.at(loss.id()).value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(lv));

  for (auto& n : nodes_) {
    if (n.kind != OpKind::Leaf) n.grad.resize(0, 0);
  }
  if (!nodes_[loss.id()].requires_grad) return;

  if (nodes_[loss.id()].kind == OpKind::Leaf) {
    grad_buffer(loss.id())(0, 0) += 1.0;
    return;
  }
  grad_buffer(loss.id())(0, 0) = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::Leaf || !n.requires_grad || n.grad.size() == 0) continue;
    propagate(id);
  }
}

void Tape::propagate(std::size_t id) {
  // nodes_ does not grow during backward, so these references stay valid.
  const Node& n = nodes_[id];
  const Mat& g = n.grad;
  const Mat& y = n.value;
  const double sign = fault_sign(n.kind);
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in_val = [&](std::size_t k) -> const Mat& { return nodes_[n.inputs[k]].value; };
  auto acc = [&](std::size_t k, const Mat& d) { grad_buffer(n.inputs[k]) += sign * d; };

  switch (n.kind) {
    case OpKind::Leaf: break;
    case OpKind::MatMul:
      if (wants(0)) acc(0, g * in_val(1).transpose());
      if (wants(1)) acc(1, in_val(0).transpose() * g);
      break;
    case OpKind::Transpose:
      if (wants(0)) acc(0, g.transpose());
      break;
    case OpKind::Add:
    case OpKind::Sub: {
      const Bcast k = broadcast_kind(in_val(0), in_val(1), op_name(n.kind));
      if (wants(0)) acc(0, g);
      if (wants(1)) acc(1, n.kind == OpKind::Add ? reduce_to(g, k) : Mat(-reduce_to(g, k)));
      break;
    }
    case OpKind::Mul: {
      const Mat& a = in_val(0);
      const Mat& b = in_val(1);
      const Bcast k = broadcast_kind(a, b, "mul");
      if (wants(0)) acc(0, g.cwiseProduct(expand(b, a.rows(), a.cols(), k)));
      if (wants(1)) acc(1, reduce_to(g.cwiseProduct(a), k));
      break;
    }
    case OpKind::Scale:
      if (wants(0)) acc(0, n.p0 * g);
      break;
    case OpKind::Exp:
      if (wants(0)) acc(0, g.cwiseProduct(y));
      break;
    case OpKind::Log:
      if (wants(0)) acc(0, g.cwiseQuotient(in_val(0)));
      break;
    case OpKind::Sigmoid:
      if (wants(0)) acc(0, g.array() * y.array() * (1.0 - y.array()));
      break;
    case OpKind::SoftmaxRow:
      if (wants(0)) {
        Mat d(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
          const double dot = g.row(i).dot(y.row(i));
          d.row(i) = y.row(i).array() * (g.row(i).array() - dot);
        }
        acc(0, d);
      }
      break;
    case OpKind::LogSumExpRow:
      if (wants(0)) {
        const Mat& x = in_val(0);
        Mat d(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          d.row(i) = g(i, 0) * (x.row(i).array() - y(i, 0)).exp();
        acc(0, d);
      }
      break;
    case OpKind::LogSumExpCol:
      if (wants(0)) {
        const Mat& x = in_val(0);
        Mat d(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          d.col(j) = g(0, j) * (x.col(j).array() - y(0, j)).exp();
        acc(0, d);
      }
      break;
    case OpKind::Sum:
      if (wants(0)) acc(0, Mat::Constant(in_val(0).rows(), in_val(0).cols(), g(0, 0)));
      break;
    case OpKind::SumRows:
      if (wants(0)) acc(0, g.replicate(1, in_val(0).cols()));
      break;
    case OpKind::SumCols:
      if (wants(0)) acc(0, g.replicate(in_val(0).rows(), 1));
      break;
    case OpKind::Mean:
      if (wants(0)) {
        const Mat& x = in_val(0);
        acc(0, Mat::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
      }
      break;
    case OpKind::ConcatCols: {
      Eigen::Index offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Eigen::Index c = in_val(k).cols();
        if (wants(k)) acc(k, g.middleCols(offset, c));
        offset += c;
      }
      break;
    }
    case OpKind::SliceCols:
      if (wants(0)) {
        Mat d = Mat::Zero(in_val(0).rows(), in_val(0).cols());
        d.middleCols(static_cast<Eigen::Index>(n.p0), g.cols()) = g;
        acc(0, d);
      }
      break;
    case OpKind::SliceRows:
      if (wants(0)) {
        Mat d = Mat::Zero(in_val(0).rows(), in_val(0).cols());
        d.middleRows(static_cast<Eigen::Index>(n.p0), g.rows()) = g;
        acc(0, d);
      }
      break;
    case OpKind::Clamp:
      if (wants(0)) {
        const Mat& x = in_val(0);
        Mat d = g;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const double v = x.data()[i];
          if (v < n.p0 || v > n.p1) d.data()[i] = 0.0;
        }
        acc(0, d);
      }
      break;
    case OpKind::Lerp: {
      const Mat& a = in_val(0);
      const Mat& b = in_val(1);
      const Bcast k = broadcast_kind(a, in_val(2), "lerp");
      const Mat t = expand(in_val(2), a.rows(), a.cols(), k);
      if (wants(0)) acc(0, g.array() * (1.0 - t.array()));
      if (wants(1)) acc(1, g.cwiseProduct(t));
      if (wants(2)) acc(2, reduce_to(g.cwiseProduct(b - a), k));
      break;
    }
  }
}

// ---- op builders -----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.value()) + " x " +
                     shape_str(b.value()));
  return t.record(OpKind::MatMul, a.value() * b.value(), {a.id(), b.id()});
}

Var transpose(const Var& a) {
  return tape_of(a).record(OpKind::Transpose, a.value().transpose(), {a.id()});
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "add");
  return t.record(OpKind::Add, a.value() + expand(b.value(), a.rows(), a.cols(), k),
                  {a.id(), b.id()});
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "sub");
  return t.record(OpKind::Sub, a.value() - expand(b.value(), a.rows(), a.cols(), k),
                  {a.id(), b.id()});
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "mul");
  return t.record(OpKind::Mul,
                  a.value().cwiseProduct(expand(b.value(), a.rows(), a.cols(), k)),
                  {a.id(), b.id()});
}

Var scale(const Var& a, double s) {
  return tape_of(a).record(OpKind::Scale, s * a.value(), {a.id()}, s);
}

Var exp(const Var& a) {
  return tape_of(a).record(OpKind::Exp, a.value().array().exp().matrix(), {a.id()});
}

Var log(const Var& a) {
  return tape_of(a).record(OpKind::Log, a.value().array().log().matrix(), {a.id()});
}

Var sigmoid(const Var& a) {
  Mat y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return tape_of(a).record(OpKind::Sigmoid, std::move(y), {a.id()});
}

Var softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return tape_of(a).record(OpKind::SoftmaxRow, std::move(y), {a.id()});
}

Var logsumexp_rows(const Var& a) {
  return tape_of(a).record(OpKind::LogSumExpRow, row_lse(a.value()), {a.id()});
}

Var logsumexp_cols(const Var& a) {
  Mat y = row_lse(a.value().transpose()).transpose();
  return tape_of(a).record(OpKind::LogSumExpCol, std::move(y), {a.id()});
}

Var sum(const Var& a) {
  return tape_of(a).record(OpKind::Sum, Mat::Constant(1, 1, a.value().sum()), {a.id()});
}

Var sum_rows(const Var& a) {
  return tape_of(a).record(OpKind::SumRows, a.value().rowwise().sum(), {a.id()});
}

Var sum_cols(const Var& a) {
  return tape_of(a).record(OpKind::SumCols, a.value().colwise().sum(), {a.id()});
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return tape_of(a).record(OpKind::Mean, Mat::Constant(1, 1, a.value().mean()), {a.id()});
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row mismatch, " + shape_str(parts.front().value()) + " vs " +
                       shape_str(p.value()));
    cols += p.cols();
    ids.push_back(p.id());
  }
  Mat y(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return t.record(OpKind::ConcatCols, std::move(y), std::move(ids));
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_str(a.value()));
  return tape_of(a).record(OpKind::SliceCols, a.value().middleCols(begin, count), {a.id()},
                           static_cast<double>(begin));
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_str(a.value()));
  return tape_of(a).record(OpKind::SliceRows, a.value().middleRows(begin, count), {a.id()},
                           static_cast<double>(begin));
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return tape_of(a).record(OpKind::Clamp, a.value().cwiseMax(lo).cwiseMin(hi), {a.id()}, lo,
                           hi);
}

Var lerp(const Var& a, const Var& b, const Var& t) {
  Tape& tape = same_tape(a, b);
  same_tape(a, t);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("lerp: " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  const Mat w = expand(t.value(), a.rows(), a.cols(), broadcast_kind(a.value(), t.value(), "lerp"));
  Mat out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out.data()[i] = std::lerp(a.value().data()[i], b.value().data()[i], w.data()[i]);
  return tape.record(OpKind::Lerp, std::move(out), {a.id(), b.id(), t.id()});
}

namespace testing {
void inject_sign_flip(OpKind kind) { g_sign_flip.store(static_cast<int>(kind)); }
void clear_faults() { g_sign_flip.store(-1); }
}  // namespace testing

}  // namespace ad
}  // namespace otfuse
