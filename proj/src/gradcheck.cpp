#include "otfuse/gradcheck.hpp"

#include <cmath>
#include <random>

namespace otfuse::ad {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

namespace {

double evaluate(const LossBuilder& f, const std::vector<Mat>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Mat& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).scalar();
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& f, const std::vector<Mat>& params, double h,
                                  const std::vector<std::string>& names) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  std::vector<Mat> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Mat& p : params) vars.push_back(tape.variable(p));
    Var loss = f(tape, vars);
    if (!std::isfinite(loss.scalar()))
      throw GradCheckError("finite_diff_check: loss is NaN/inf at the base point", 0, -1);
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  std::vector<Mat> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GroupError ge;
    ge.name = k < names.size() ? names[k] : "param" + std::to_string(k);
    for (Eigen::Index e = 0; e < params[k].size(); ++e) {
      const double base = params[k].data()[e];
      work[k].data()[e] = base + h;
      const double fp = evaluate(f, work);
      work[k].data()[e] = base - h;
      const double fm = evaluate(f, work);
      work[k].data()[e] = base;

      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k].data()[e];
      if (std::isnan(numeric) || std::isnan(a))
        throw GradCheckError("finite_diff_check: NaN at " + ge.name + "[" + std::to_string(e) +
                                 "]",
                             k, e);
      const double err = relative_error(a, numeric);
      if (err > ge.max_rel_error) {
        ge.max_rel_error = err;
        ge.worst_entry = e;
      }
    }
    if (ge.max_rel_error > report.max_rel_error) {
      report.max_rel_error = ge.max_rel_error;
      report.worst_group = k;
      report.worst_entry = ge.worst_entry;
    }
    report.groups.push_back(std::move(ge));
  }
  return report;
}

std::vector<GroupError> check_primitives(unsigned seed, double h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  auto rand = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
    return m;
  };

  // Each case reduces the op output against fixed random weights so every
  // output entry contributes a distinct cotangent.
  struct Case {
    OpKind kind;
    std::vector<Mat> inputs;
    std::function<Var(Tape&, const std::vector<Var>&)> op;
  };
  std::vector<Case> cases;
  cases.push_back({OpKind::MatMul, {rand(3, 4), rand(4, 2)},
                   [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  cases.push_back({OpKind::Transpose, {rand(3, 4)},
                   [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); }});
  cases.push_back({OpKind::Add, {rand(3, 4), rand(1, 4), rand(3, 1)},
                   [](Tape&, const std::vector<Var>& v) { return add(add(v[0], v[1]), v[2]); }});
  cases.push_back({OpKind::Sub, {rand(3, 4), rand(1, 1), rand(3, 4)},
                   [](Tape&, const std::vector<Var>& v) { return sub(sub(v[0], v[1]), v[2]); }});
  cases.push_back({OpKind::Mul, {rand(3, 4), rand(3, 1), rand(1, 4), rand(1, 1)},
                   [](Tape&, const std::vector<Var>& v) {
                     return mul(mul(mul(v[0], v[1]), v[2]), v[3]);
                   }});
  cases.push_back({OpKind::Scale, {rand(2, 3)},
                   [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7); }});
  cases.push_back({OpKind::Exp, {rand(3, 3)},
                   [](Tape&, const std::vector<Var>& v) { return exp(v[0]); }});
  {
    Mat pos = rand(3, 3).array().exp().matrix();
    cases.push_back({OpKind::Log, {pos},
                     [](Tape&, const std::vector<Var>& v) { return log(v[0]); }});
  }
  cases.push_back({OpKind::Sigmoid, {rand(3, 3)},
                   [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); }});
  cases.push_back({OpKind::SoftmaxRow, {rand(3, 5)},
                   [](Tape&, const std::vector<Var>& v) { return softmax_rows(v[0]); }});
  cases.push_back({OpKind::LogSumExpRow, {rand(3, 5)},
                   [](Tape&, const std::vector<Var>& v) { return logsumexp_rows(v[0]); }});
  cases.push_back({OpKind::LogSumExpCol, {rand(3, 5)},
                   [](Tape&, const std::vector<Var>& v) { return logsumexp_cols(v[0]); }});
  cases.push_back({OpKind::Sum, {rand(3, 4)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return mul(sum(v[0]), t.constant(0.7));
                   }});
  cases.push_back({OpKind::SumRows, {rand(3, 4)},
                   [](Tape&, const std::vector<Var>& v) { return sum_rows(v[0]); }});
  cases.push_back({OpKind::SumCols, {rand(3, 4)},
                   [](Tape&, const std::vector<Var>& v) { return sum_cols(v[0]); }});
  cases.push_back({OpKind::Mean, {rand(3, 4)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return mul(mean(v[0]), t.constant(1.3));
                   }});
  cases.push_back({OpKind::ConcatCols, {rand(3, 2), rand(3, 1), rand(3, 3)},
                   [](Tape&, const std::vector<Var>& v) { return concat_cols(v); }});
  cases.push_back({OpKind::SliceCols, {rand(3, 5)},
                   [](Tape&, const std::vector<Var>& v) { return slice_cols(v[0], 1, 3); }});
  cases.push_back({OpKind::SliceRows, {rand(4, 3)},
                   [](Tape&, const std::vector<Var>& v) { return slice_rows(v[0], 1, 2); }});
  {
    // Keep inputs away from the clamp kinks so the central difference is valid.
    Mat x = rand(3, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double& e = x.data()[i];
      if (std::abs(std::abs(e) - 1.0) < 0.05) e += 0.1;
    }
    cases.push_back({OpKind::Clamp, {x},
                     [](Tape&, const std::vector<Var>& v) { return clamp(v[0], -1.0, 1.0); }});
  }
  cases.push_back({OpKind::Lerp, {rand(3, 4), rand(3, 4), rand(3, 1)},
                   [](Tape&, const std::vector<Var>& v) { return lerp(v[0], v[1], v[2]); }});
  cases.push_back({OpKind::Lerp, {rand(3, 4), rand(3, 4), rand(3, 4)},
                   [](Tape&, const std::vector<Var>& v) { return lerp(v[0], v[1], v[2]); }});

  std::vector<GroupError> out;
  for (auto& c : cases) {
    Tape probe;
    std::vector<Var> pv;
    for (const Mat& m : c.inputs) pv.push_back(probe.constant(m));
    const Mat& shape = c.op(probe, pv).value();
    Mat weights = rand(shape.rows(), shape.cols());

    LossBuilder f = [&c, weights](Tape& t, const std::vector<Var>& v) {
      return sum(mul(c.op(t, v), t.constant(weights)));
    };
    GradCheckReport r = finite_diff_check(f, c.inputs, h);
    out.push_back({op_name(c.kind), r.max_rel_error, r.worst_entry});
  }
  return out;
}

}  // namespace otfuse::ad
