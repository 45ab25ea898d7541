#pragma once

// Global attention path + local OT aggregation path, fused and gated per
// token by alignment confidence.

#include "otfuse/autodiff.hpp"

#include <string>

namespace otfuse::fusion {

struct AttentionParams {
  Mat w_q, w_k, w_v, w_o;  // each d x d
  int heads = 4;
};

struct GateParams {
  Mat w_g;  // (2d + 1) x 1, acting on [T_i ; F_fusion(i) ; conf_i]
  double bias = 0.0;
};

enum class OtAggregation {
  Modulated,  // F_ot(i) = T_i (*) sum_j P^_ij V_j
  Pure,       // F_ot(i) = sum_j P^_ij V_j
};

const char* to_string(OtAggregation mode);
OtAggregation ot_aggregation_from_string(const std::string& name);

struct GateState {
  Mat f_att;     // N x d
  Mat f_ot;      // N x d
  Mat f_fusion;  // N x d
  Mat conf;      // N x 1
  Mat gate;      // N x 1
  Mat t_prime;   // N x d
};

// ---- tape route ------------------------------------------------------------

// Multi-head scaled dot-product attention: T queries, V keys and values,
// softmax over the M patches per head, heads concatenated then projected.
ad::Var cross_attention(const ad::Var& T, const ad::Var& V, const ad::Var& w_q,
                        const ad::Var& w_k, const ad::Var& w_v, const ad::Var& w_o, int heads);

// `plan` is the raw (head-averaged) N x M plan; rows are renormalised here.
ad::Var ot_aggregate(const ad::Var& T, const ad::Var& V, const ad::Var& plan,
                     OtAggregation mode = OtAggregation::Modulated);

ad::Var fuse(const ad::Var& f_att, const ad::Var& f_ot);

// Pre-sigmoid gate logits W_g [T ; F ; conf] + b, N x 1.
ad::Var gate_logits(const ad::Var& T, const ad::Var& f_fusion, const ad::Var& conf,
                    const ad::Var& w_g, const ad::Var& bias);

// Logits are clamped to +-kGateLogitBound so the gate stays strictly inside
// (0, 1) in double precision (sigmoid(37) already rounds to 1).
inline constexpr double kGateLogitBound = 36.0;
ad::Var gate_from_logits(const ad::Var& logits);

// T'_i = g_i F_fusion(i) + (1 - g_i) T_i for an N x 1 gate column.
ad::Var gated_mix(const ad::Var& T, const ad::Var& f_fusion, const ad::Var& gate);

// ---- plain-value route -----------------------------------------------------

Mat cross_attention(const Mat& T, const Mat& V, const AttentionParams& params);
Mat ot_aggregate(const Mat& T, const Mat& V, const Mat& plan,
                 OtAggregation mode = OtAggregation::Modulated);
Mat fuse(const Mat& f_att, const Mat& f_ot);

// Fills gate, conf and t_prime (and f_fusion); f_att / f_ot are left empty.
GateState gate_tokens(const Mat& T, const Mat& f_fusion, const Mat& conf,
                      const GateParams& params);

}  // namespace otfuse::fusion
