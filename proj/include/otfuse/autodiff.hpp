#pragma once

// Minimal reverse-mode differentiation over dense 2-D matrices.
//
// Every value lives on a Tape as a Node; nodes are appended in evaluation
// order, so reverse creation order is a valid reverse topological order and
// backward() visits each node exactly once. Vectors are 1xC or Rx1 matrices,
// scalars are 1x1.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace otfuse {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(const Mat& m);

namespace ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  Leaf,
  MatMul,
  Transpose,
  Add,         // same shape, or rhs broadcast from 1x1 / 1xC / Rx1
  Sub,         // same broadcast rule as Add
  Mul,         // same broadcast rule as Add
  Scale,       // multiply by a compile-time constant
  Exp,
  Log,
  Sigmoid,
  SoftmaxRow,
  LogSumExpRow,  // RxC -> Rx1
  LogSumExpCol,  // RxC -> 1xC
  Sum,           // -> 1x1
  SumRows,       // RxC -> Rx1 (sum along each row)
  SumCols,       // RxC -> 1xC
  Mean,          // -> 1x1
  ConcatCols,
  SliceCols,
  SliceRows,
  Clamp,
  Lerp,  // a + t (b - a), t same shape or broadcast like Add
};

const char* op_name(OpKind kind);

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is tracked.
  Var variable(Mat value);
  // Leaf excluded from differentiation.
  Var constant(Mat value);
  Var constant(double value);

  // Seeds d(loss)/d(loss) = 1 and runs the chain rule. Leaf gradients
  // accumulate across calls; interior adjoints are reset on each call.
  void backward(const Var& loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }

  // Internal: used by the op builders.
  Var record(OpKind kind, Mat value, std::vector<std::size_t> inputs,
             double p0 = 0.0, double p1 = 0.0);

 private:
  friend class Var;

  struct Node {
    OpKind kind = OpKind::Leaf;
    Mat value;
    Mat grad;  // empty until backward touches it
    std::vector<std::size_t> inputs;
    double p0 = 0.0;  // op parameter (scale factor, clamp low, slice offset)
    double p1 = 0.0;  // op parameter (clamp high)
    bool requires_grad = false;
  };

  void propagate(std::size_t id);
  Mat& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;  // deque: references to values survive appends
};

// Op builders. All inputs must live on the same tape.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);
Var logsumexp_cols(const Var& a);
Var sum(const Var& a);
Var sum_rows(const Var& a);
Var sum_cols(const Var& a);
Var mean(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var clamp(const Var& a, double lo, double hi);
// Elementwise std::lerp: stays within [a, b] for t in [0, 1].
Var lerp(const Var& a, const Var& b, const Var& t);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

namespace testing {
// Mutation hook for the gradient harness: flips the sign of the named op's
// backward rule until cleared. Not for production use.
void inject_sign_flip(OpKind kind);
void clear_faults();
}  // namespace testing

}  // namespace ad
}  // namespace otfuse
