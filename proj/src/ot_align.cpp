#include "otfuse/ot_align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace otfuse::ot {

namespace {

Mat lse_rows(const Mat& x) {
  Mat out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

Mat lse_cols(const Mat& x) {
  Mat out(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).maxCoeff();
    out(0, j) = m + std::log((x.col(j).array() - m).exp().sum());
  }
  return out;
}

void check_marginals(const Mat& cost, const Mat& a, const Mat& b) {
  if (a.rows() != cost.rows() || a.cols() != 1)
    throw std::invalid_argument("sinkhorn: row marginal " + shape_str(a) +
                                " does not match cost " + shape_str(cost));
  if (b.cols() != cost.cols() || b.rows() != 1)
    throw std::invalid_argument("sinkhorn: column marginal " + shape_str(b) +
                                " does not match cost " + shape_str(cost));
  for (const Mat* m : {&a, &b}) {
    if ((m->array() <= 0.0).any())
      throw std::invalid_argument("sinkhorn: marginals must be strictly positive");
    if (std::abs(m->sum() - 1.0) > 1e-9)
      throw std::invalid_argument("sinkhorn: marginals must sum to 1");
  }
}

void check_options(const SinkhornOptions& o) {
  if (!(o.tau > 0.0)) throw std::invalid_argument("sinkhorn: tau must be positive");
  if (o.max_iters < 1) throw std::invalid_argument("sinkhorn: max_iters must be >= 1");
  if (o.tol < 0.0) throw std::invalid_argument("sinkhorn: tol must be >= 0");
}

constexpr int kAnnealStageIters = 100;

// Row violation after a column update (columns are then exact up to rounding).
double row_violation(const Mat& log_kernel, const Mat& alpha, const Mat& beta, const Mat& a) {
  const Mat lse = lse_rows(log_kernel + beta.replicate(log_kernel.rows(), 1));
  double v = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    v = std::max(v, std::abs(std::exp(alpha(i, 0) + lse(i, 0)) - a(i, 0)));
  return v;
}

}  // namespace

void validate_heads(const std::vector<HeadProjection>& heads, Eigen::Index model_dim) {
  if (heads.empty()) throw std::invalid_argument("at least one OT head is required");
  const Eigen::Index dh = heads.front().head_dim();
  for (const auto& h : heads) {
    if (h.w_t.rows() != model_dim || h.w_v.rows() != model_dim)
      throw std::invalid_argument("head projection rows " + shape_str(h.w_t) + " / " +
                                  shape_str(h.w_v) + " do not match model width " +
                                  std::to_string(model_dim));
    if (h.w_t.cols() != dh || h.w_v.cols() != dh)
      throw std::invalid_argument("all heads must share head width");
    if (!std::isfinite(h.lambda_spatial))
      throw std::invalid_argument("spatial bias must be finite");
  }
  if (dh * static_cast<Eigen::Index>(heads.size()) != model_dim)
    throw std::invalid_argument("head width x head count must equal model width");
}

void PositionGrid::validate() const {
  for (const Mat* m : {&pos_t, &pos_v}) {
    if (m->cols() != 2) throw std::invalid_argument("positions must be N x 2");
    if (m->size() > 0 && ((m->array() < 0.0).any() || (m->array() > 1.0).any()))
      throw std::invalid_argument("positions must lie in [0,1]^2");
  }
}

Mat PositionGrid::distances() const {
  Mat d(pos_t.rows(), pos_v.rows());
  for (Eigen::Index i = 0; i < pos_t.rows(); ++i)
    for (Eigen::Index j = 0; j < pos_v.rows(); ++j)
      d(i, j) = (pos_t.row(i) - pos_v.row(j)).norm();
  return d;
}

Mat uniform_marginal(Eigen::Index n, bool as_row) {
  if (n <= 0) throw std::invalid_argument("marginal length must be positive");
  return as_row ? Mat::Constant(1, n, 1.0 / static_cast<double>(n))
                : Mat::Constant(n, 1, 1.0 / static_cast<double>(n));
}

double marginal_violation(const Mat& pi, const Mat& row_marginal, const Mat& col_marginal) {
  const double r = (pi.rowwise().sum() - row_marginal).cwiseAbs().maxCoeff();
  const double c = (pi.colwise().sum() - col_marginal).cwiseAbs().maxCoeff();
  return std::max(r, c);
}

// ---- plain-value route -----------------------------------------------------

std::vector<HeadFeatures> project_heads(const Mat& T, const Mat& V,
                                        const std::vector<HeadProjection>& heads) {
  if (T.cols() != V.cols())
    throw std::invalid_argument("project_heads: token width " + shape_str(T) +
                                " differs from patch width " + shape_str(V));
  validate_heads(heads, T.cols());
  std::vector<HeadFeatures> out;
  out.reserve(heads.size());
  for (const auto& h : heads) out.push_back({T * h.w_t, V * h.w_v});
  return out;
}

Mat build_cost(const Mat& t_h, const Mat& v_h, const PositionGrid& positions,
               double lambda_spatial) {
  if (t_h.cols() != v_h.cols())
    throw std::invalid_argument("build_cost: head widths differ, " + shape_str(t_h) + " vs " +
                                shape_str(v_h));
  if (positions.pos_t.rows() != t_h.rows() || positions.pos_v.rows() != v_h.rows())
    throw std::invalid_argument("build_cost: position grid does not match feature rows");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(t_h.cols()));
  return -inv_sqrt * (t_h * v_h.transpose()) + lambda_spatial * positions.distances();
}

TransportPlan sinkhorn(const Mat& cost, const Mat& row_marginal, const Mat& col_marginal,
                       const SinkhornOptions& options, bool record_history) {
  check_options(options);
  check_marginals(cost, row_marginal, col_marginal);
  if (!cost.allFinite()) throw std::invalid_argument("sinkhorn: cost has non-finite entries");

  const Mat log_kernel = (-1.0 / options.tau) * cost;
  const Mat log_a = row_marginal.array().log().matrix();
  const Mat log_b = col_marginal.array().log().matrix();
  Mat alpha = Mat::Zero(cost.rows(), 1);
  Mat beta = Mat::Zero(1, cost.cols());

  TransportPlan plan;
  plan.tau = options.tau;
  plan.row_marginal = row_marginal;
  plan.col_marginal = col_marginal;
  double violation = std::numeric_limits<double>::infinity();
  int it = 0;
  if (options.anneal) {
    // potentials in cost units, f = t * alpha, g = t * beta
    Mat f = Mat::Zero(cost.rows(), 1), g = Mat::Zero(1, cost.cols());
    double t = cost.maxCoeff() - cost.minCoeff();
    while (t > 2.0 * options.tau && it < options.max_iters) {
      t *= 0.5;
      const Mat lk = (-1.0 / t) * cost;
      for (int k = 0; k < kAnnealStageIters && it < options.max_iters; ++k, ++it) {
        f = t * (log_a - lse_rows(lk + (g / t).replicate(cost.rows(), 1)));
        g = t * (log_b - lse_cols(lk + (f / t).replicate(1, cost.cols())));
        if (row_violation(lk, f / t, g / t, row_marginal) <= options.tol) break;
      }
    }
    alpha = f / options.tau;
    beta = g / options.tau;
  }
  while (it < options.max_iters) {
    ++it;
    alpha = log_a - lse_rows(log_kernel + beta.replicate(cost.rows(), 1));
    beta = log_b - lse_cols(log_kernel + alpha.replicate(1, cost.cols()));
    violation = row_violation(log_kernel, alpha, beta, row_marginal);
    if (record_history) plan.violation_history.push_back(violation);
    if (violation <= options.tol) break;
  }
  plan.pi = (log_kernel + alpha.replicate(1, cost.cols()) + beta.replicate(cost.rows(), 1))
                .array()
                .exp()
                .matrix();
  plan.iterations_used = it;
  plan.marginal_violation = marginal_violation(plan.pi, row_marginal, col_marginal);
  return plan;
}

TransportPlan average_heads(const std::vector<TransportPlan>& plans) {
  if (plans.empty()) throw std::invalid_argument("average_heads: no plans");
  const auto& first = plans.front();
  TransportPlan out;
  out.pi = Mat::Zero(first.pi.rows(), first.pi.cols());
  for (const auto& p : plans) {
    if (p.pi.rows() != first.pi.rows() || p.pi.cols() != first.pi.cols())
      throw std::invalid_argument("average_heads: plan shapes differ, " + shape_str(p.pi) +
                                  " vs " + shape_str(first.pi));
    if ((p.row_marginal - first.row_marginal).cwiseAbs().maxCoeff() > 1e-12 ||
        (p.col_marginal - first.col_marginal).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("average_heads: plans have different marginals");
    out.pi += p.pi;
    out.iterations_used = std::max(out.iterations_used, p.iterations_used);
  }
  out.pi /= static_cast<double>(plans.size());
  out.row_marginal = first.row_marginal;
  out.col_marginal = first.col_marginal;
  out.tau = first.tau;
  out.marginal_violation = marginal_violation(out.pi, out.row_marginal, out.col_marginal);
  return out;
}

Mat row_entropy_confidence(const Mat& plan) {
  const double max_entropy = std::log(static_cast<double>(plan.cols()));
  Mat conf(plan.rows(), 1);
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    const double total = plan.row(i).sum();
    if (!(total > 0.0)) {
      conf(i, 0) = max_entropy;
      continue;
    }
    double h = 0.0;
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
      const double p = plan(i, j) / total;
      if (p > 0.0) h -= p * std::log(p);
    }
    conf(i, 0) = std::clamp(h, 0.0, max_entropy);
  }
  return conf;
}

ExactOtSolution exact_ot_oracle(const Mat& cost) {
  const Eigen::Index n = cost.rows();
  if (n != cost.cols()) throw std::invalid_argument("exact_ot_oracle: cost must be square");
  if (n < 1 || n > 8) throw std::invalid_argument("exact_ot_oracle: n must be in [1, 8]");

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  ExactOtSolution best;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
    c /= static_cast<double>(n);
    if (c < best.cost) {
      best.cost = c;
      best.assignment = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  best.plan = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    best.plan(i, best.assignment[static_cast<std::size_t>(i)]) = 1.0 / static_cast<double>(n);
  return best;
}

nlohmann::json plan_to_json(const TransportPlan& plan) {
  std::vector<double> values(plan.pi.data(), plan.pi.data() + plan.pi.size());
  return {{"shape", {plan.pi.rows(), plan.pi.cols()}},
          {"tau", plan.tau},
          {"iterations_used", plan.iterations_used},
          {"marginal_violation", plan.marginal_violation},
          {"values", values}};
}

// ---- tape route ------------------------------------------------------------

ad::Var build_cost(const ad::Var& t_h, const ad::Var& v_h, const ad::Var& distances,
                   const ad::Var& lambda_spatial) {
  if (t_h.cols() != v_h.cols())
    throw ad::ShapeError("build_cost: head widths differ, " + shape_str(t_h.value()) + " vs " +
                         shape_str(v_h.value()));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(t_h.cols()));
  ad::Var sim = ad::scale(ad::matmul(t_h, ad::transpose(v_h)), -inv_sqrt);
  return ad::add(sim, ad::mul(distances, lambda_spatial));
}

TapeSinkhornResult sinkhorn(const ad::Var& cost, const Mat& row_marginal, const Mat& col_marginal,
                            const SinkhornOptions& options) {
  check_options(options);
  check_marginals(cost.value(), row_marginal, col_marginal);
  if (!cost.value().allFinite())
    throw std::invalid_argument("sinkhorn: cost has non-finite entries");

  ad::Tape& tape = *cost.tape();
  const ad::Var log_kernel = ad::scale(cost, -1.0 / options.tau);
  const ad::Var log_a = tape.constant(row_marginal.array().log().matrix());
  const ad::Var log_b = tape.constant(col_marginal.array().log().matrix());
  ad::Var alpha;
  ad::Var beta = tape.constant(Mat::Zero(1, cost.cols()));

  TapeSinkhornResult out;
  int it = 0;
  double violation = std::numeric_limits<double>::infinity();
  while (it < options.max_iters) {
    ++it;
    alpha = ad::sub(log_a, ad::logsumexp_rows(ad::add(log_kernel, beta)));
    beta = ad::sub(log_b, ad::logsumexp_cols(ad::add(log_kernel, alpha)));
    violation = row_violation(log_kernel.value(), alpha.value(), beta.value(), row_marginal);
    if (violation <= options.tol) break;
  }
  out.log_plan = ad::add(ad::add(log_kernel, alpha), beta);
  out.iterations_used = it;
  const Mat pi = out.log_plan.value().array().exp().matrix();
  out.marginal_violation = marginal_violation(pi, row_marginal, col_marginal);
  return out;
}

ad::Var row_normalize(const ad::Var& plan) {
  return ad::softmax_rows(
      ad::log(ad::clamp(plan, 1e-300, std::numeric_limits<double>::infinity())));
}

ad::Var row_entropy_confidence(const ad::Var& plan) {
  const ad::Var log_p =
      ad::log(ad::clamp(plan, 1e-300, std::numeric_limits<double>::infinity()));
  const ad::Var log_norm = ad::sub(log_p, ad::logsumexp_rows(log_p));
  const ad::Var p_norm = ad::exp(log_norm);
  return ad::scale(ad::sum_rows(ad::mul(p_norm, log_norm)), -1.0);
}

}  // namespace otfuse::ot
