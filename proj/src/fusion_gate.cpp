#include "otfuse/fusion_gate.hpp"

#include "otfuse/ot_align.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace otfuse::fusion {

const char* to_string(OtAggregation mode) {
  return mode == OtAggregation::Modulated ? "modulated" : "pure";
}

OtAggregation ot_aggregation_from_string(const std::string& name) {
  if (name == "modulated") return OtAggregation::Modulated;
  if (name == "pure") return OtAggregation::Pure;
  throw std::invalid_argument("unknown ot_aggregation_mode '" + name +
                              "' (expected modulated or pure)");
}

ad::Var cross_attention(const ad::Var& T, const ad::Var& V, const ad::Var& w_q,
                        const ad::Var& w_k, const ad::Var& w_v, const ad::Var& w_o, int heads) {
  const Eigen::Index d = T.cols();
  if (V.cols() != d)
    throw ad::ShapeError("cross_attention: token width " + shape_str(T.value()) +
                         " differs from patch width " + shape_str(V.value()));
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("cross_attention: head count must divide the model width");

  const ad::Var q = ad::matmul(T, w_q);
  const ad::Var k = ad::matmul(V, w_k);
  const ad::Var v = ad::matmul(V, w_v);
  const Eigen::Index dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * dh, dh);
    const ad::Var kh = ad::slice_cols(k, h * dh, dh);
    const ad::Var vh = ad::slice_cols(v, h * dh, dh);
    const ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    outs.push_back(ad::matmul(attn, vh));
  }
  const ad::Var concat = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return ad::matmul(concat, w_o);
}

ad::Var ot_aggregate(const ad::Var& T, const ad::Var& V, const ad::Var& plan, OtAggregation mode) {
  if (plan.rows() != T.rows() || plan.cols() != V.rows())
    throw ad::ShapeError("ot_aggregate: plan " + shape_str(plan.value()) + " does not match " +
                         shape_str(T.value()) + " tokens and " + shape_str(V.value()) +
                         " patches");
  const ad::Var pooled = ad::matmul(ot::row_normalize(plan), V);
  return mode == OtAggregation::Modulated ? ad::mul(T, pooled) : pooled;
}

ad::Var fuse(const ad::Var& f_att, const ad::Var& f_ot) {
  if (f_att.rows() != f_ot.rows() || f_att.cols() != f_ot.cols())
    throw ad::ShapeError("fuse: " + shape_str(f_att.value()) + " vs " + shape_str(f_ot.value()));
  return ad::add(f_att, f_ot);
}

ad::Var gate_logits(const ad::Var& T, const ad::Var& f_fusion, const ad::Var& conf,
                    const ad::Var& w_g, const ad::Var& bias) {
  const ad::Var features = ad::concat_cols({T, f_fusion, conf});
  return ad::add(ad::matmul(features, w_g), bias);
}

ad::Var gate_from_logits(const ad::Var& logits) {
  return ad::sigmoid(ad::clamp(logits, -kGateLogitBound, kGateLogitBound));
}

ad::Var gated_mix(const ad::Var& T, const ad::Var& f_fusion, const ad::Var& gate) {
  return ad::lerp(T, f_fusion, gate);
}

// ---- plain-value route -----------------------------------------------------

Mat cross_attention(const Mat& T, const Mat& V, const AttentionParams& params) {
  ad::Tape tape;
  return cross_attention(tape.constant(T), tape.constant(V), tape.constant(params.w_q),
                         tape.constant(params.w_k), tape.constant(params.w_v),
                         tape.constant(params.w_o), params.heads)
      .value();
}

Mat ot_aggregate(const Mat& T, const Mat& V, const Mat& plan, OtAggregation mode) {
  ad::Tape tape;
  return ot_aggregate(tape.constant(T), tape.constant(V), tape.constant(plan), mode).value();
}

Mat fuse(const Mat& f_att, const Mat& f_ot) {
  ad::Tape tape;
  return fuse(tape.constant(f_att), tape.constant(f_ot)).value();
}

GateState gate_tokens(const Mat& T, const Mat& f_fusion, const Mat& conf,
                      const GateParams& params) {
  if (params.w_g.rows() != T.cols() + f_fusion.cols() + 1 || params.w_g.cols() != 1)
    throw ad::ShapeError("gate_tokens: gate weight " + shape_str(params.w_g) +
                         " does not match feature width " + std::to_string(T.cols()));
  ad::Tape tape;
  const ad::Var t = tape.constant(T);
  const ad::Var f = tape.constant(f_fusion);
  const ad::Var g = gate_from_logits(
      gate_logits(t, f, tape.constant(conf), tape.constant(params.w_g), tape.constant(params.bias)));
  GateState s;
  s.f_fusion = f_fusion;
  s.conf = conf;
  s.gate = g.value();
  s.t_prime = gated_mix(t, f, g).value();
  return s;
}

}  // namespace otfuse::fusion
