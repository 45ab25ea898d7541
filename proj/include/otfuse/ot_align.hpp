#pragma once

// Multi-head entropic optimal-transport alignment between token features
// (N x d) and patch features (M x d).
//
// Each head projects both sides into a d_h-wide subspace, builds
//   C_ij = -<T_i, V_j> / sqrt(d_h) + lambda * ||pos_T(i) - pos_V(j)||_2
// and solves the entropic OT problem with log-domain Sinkhorn. Plans of all
// heads are averaged with equal weight.
//
// Two routes are provided for most operations: a plain-value route on Mat
// (used by oracles, diagnostics and tests) and a tape route on ad::Var (used
// for training; Sinkhorn iterations are unrolled onto the tape).

#include "otfuse/autodiff.hpp"

#include "json.hpp"

#include <vector>

namespace otfuse::ot {

struct HeadProjection {
  Mat w_t;  // d x d_h
  Mat w_v;  // d x d_h
  double lambda_spatial = 0.1;

  Eigen::Index head_dim() const { return w_t.cols(); }
};

// Checks d_h * H == d, matching projection shapes and finite lambdas.
void validate_heads(const std::vector<HeadProjection>& heads, Eigen::Index model_dim);

struct PositionGrid {
  Mat pos_t;  // N x 2, token box centres in [0,1]^2
  Mat pos_v;  // M x 2, patch centres in [0,1]^2

  void validate() const;
  // Euclidean distance between every token and patch centre (N x M).
  Mat distances() const;
};

struct SinkhornOptions {
  double tau = 0.1;
  int max_iters = 200;
  double tol = 1e-6;
  // Warm start by halving the temperature from the cost range down to tau.
  // Same fixed point, far fewer iterations at small tau. Value route only.
  bool anneal = false;
};

struct TransportPlan {
  Mat pi;            // N x M
  Mat row_marginal;  // N x 1
  Mat col_marginal;  // 1 x M
  double tau = 0.0;
  int iterations_used = 0;
  double marginal_violation = 0.0;  // max-norm over row and column sums
  std::vector<double> violation_history;  // one entry per iteration at tau, if requested
};

Mat uniform_marginal(Eigen::Index n, bool as_row);

// Max-norm violation of both marginal constraints.
double marginal_violation(const Mat& pi, const Mat& row_marginal, const Mat& col_marginal);

// ---- plain-value route -----------------------------------------------------

struct HeadFeatures {
  Mat t;  // N x d_h
  Mat v;  // M x d_h
};

std::vector<HeadFeatures> project_heads(const Mat& T, const Mat& V,
                                        const std::vector<HeadProjection>& heads);

Mat build_cost(const Mat& t_h, const Mat& v_h, const PositionGrid& positions,
               double lambda_spatial);

// Log-domain Sinkhorn. Stops as soon as the marginal violation is <= tol;
// otherwise returns the plan after max_iters with the violation reported.
TransportPlan sinkhorn(const Mat& cost, const Mat& row_marginal, const Mat& col_marginal,
                       const SinkhornOptions& options, bool record_history = false);

TransportPlan average_heads(const std::vector<TransportPlan>& plans);

// Shannon entropy (natural log) of each row of the row-renormalised plan.
// A zero row maps to log M. Returns N x 1.
Mat row_entropy_confidence(const Mat& plan);

struct ExactOtSolution {
  double cost = 0.0;
  Mat plan;                 // permutation matrix / n
  std::vector<int> assignment;  // row i -> column assignment[i]
};

// Exhaustive search over permutations for square costs with uniform marginals.
ExactOtSolution exact_ot_oracle(const Mat& cost);

nlohmann::json plan_to_json(const TransportPlan& plan);

// ---- tape route ------------------------------------------------------------

ad::Var build_cost(const ad::Var& t_h, const ad::Var& v_h, const ad::Var& distances,
                   const ad::Var& lambda_spatial);

struct TapeSinkhornResult {
  ad::Var log_plan;  // N x M, log pi
  int iterations_used = 0;
  double marginal_violation = 0.0;
};

// Same iteration as the value route, with every update recorded on the tape
// so gradients flow through the unrolled solver.
TapeSinkhornResult sinkhorn(const ad::Var& cost, const Mat& row_marginal, const Mat& col_marginal,
                            const SinkhornOptions& options);

// Row-renormalised plan (rows sum to 1) from any positive plan.
ad::Var row_normalize(const ad::Var& plan);

// N x 1 entropy of each row of the row-renormalised plan.
ad::Var row_entropy_confidence(const ad::Var& plan);

}  // namespace otfuse::ot
