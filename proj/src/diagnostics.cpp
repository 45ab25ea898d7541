#include "otfuse/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace otfuse::diag {

namespace {

Mat uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

MicroInstance make_micro_instance(std::uint64_t seed) {
  constexpr int kTokens = 4, kPatches = 6, kVocab = 8, kPatchDim = 9;
  ModelConfig cfg;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.tau = 0.5;
  cfg.sinkhorn_iters = 15;
  cfg.sinkhorn_tol = 0.0;  // fixed iteration count keeps the loss smooth
  MicroInstance mi;
  mi.model = model::init_model(cfg, kVocab, kPatchDim, seed);

  std::mt19937_64 rng(seed * 7919 + 1);
  for (auto& t : mi.model.tensors) t = uniform(rng, t.rows(), t.cols(), -0.6, 0.6);
  for (std::size_t h : mi.model.layout.head_lambda) mi.model.tensors[h](0, 0) = 0.3;

  synth::DocInputs& in = mi.inputs;
  in.one_hot = Mat::Zero(kTokens, kVocab);
  const int ids[kTokens] = {0, 3, 5, 3};
  for (int i = 0; i < kTokens; ++i) in.one_hot(i, ids[i]) = 1.0;
  in.token_pos = uniform(rng, kTokens, 2, 0.0, 1.0);
  in.patch_pos = uniform(rng, kPatches, 2, 0.0, 1.0);
  in.token_side = uniform(rng, kTokens, synth::kTokenSideDim, -1.0, 1.0);
  in.patch_raw = Mat::Zero(kPatches, kPatchDim + 2);
  in.patch_raw.leftCols(kPatchDim) = uniform(rng, kPatches, kPatchDim, -1.0, 1.0);
  in.patch_raw.rightCols(2) = in.patch_pos;
  in.targets = {1, 2, 0, 5};

  std::normal_distribution<double> normal(0.0, 1.0);
  mi.epsilon = Mat(kTokens, cfg.model_dim);
  for (Eigen::Index i = 0; i < mi.epsilon.size(); ++i) mi.epsilon.data()[i] = normal(rng);
  return mi;
}

ad::LossBuilder micro_loss(const MicroInstance& mi) {
  return [&mi](ad::Tape& tape, const std::vector<ad::Var>& params) {
    const auto out = model::forward(tape, params, mi.model, {}, mi.inputs, &mi.epsilon);
    const double n = static_cast<double>(mi.inputs.targets.size());
    return ad::scale(ad::add(out.ce_sum, ad::scale(out.kl_sum, mi.beta)), 1.0 / n);
  };
}

GradientSuiteReport run_gradient_suite(std::uint64_t seed) {
  GradientSuiteReport r;
  const MicroInstance mi = make_micro_instance(seed);
  const auto full =
      ad::finite_diff_check(micro_loss(mi), mi.model.tensors, 1e-5, mi.model.names);
  r.groups = full.groups;
  for (auto g : ad::check_primitives(static_cast<unsigned>(seed))) {
    g.name = "op:" + g.name;
    r.groups.push_back(g);
  }
  for (const auto& g : r.groups) {
    r.max_rel_error = std::max(r.max_rel_error, g.max_rel_error);
    if (!(g.max_rel_error < kGradientTolerance)) r.failing.push_back(g.name);
  }
  r.passed = r.failing.empty();
  return r;
}

std::string format_gradient_report(const GradientSuiteReport& r) {
  std::ostringstream out;
  char line[160];
  for (const auto& g : r.groups) {
    std::snprintf(line, sizeof line, "%-24s max_rel_error %.3e %s\n", g.name.c_str(), g.max_rel_error,
                  g.max_rel_error < kGradientTolerance ? "ok" : "FAIL");
    out << line;
  }
  if (r.passed) {
    std::snprintf(line, sizeof line, "PASS: %zu groups, max relative error %.3e < %.0e\n",
                  r.groups.size(), r.max_rel_error, kGradientTolerance);
    out << line;
  } else {
    out << "FAIL: relative error above " << kGradientTolerance << " in";
    for (const auto& name : r.failing) out << ' ' << name;
    out << '\n';
  }
  return out.str();
}

nlohmann::ordered_json diagnose(const model::Model& model, const model::Ablation& ablation,
                                const std::vector<synth::SynthDocument>& docs, int workers) {
  train::EvalOptions opts;
  opts.workers = workers;
  opts.resolve_plans = true;
  const train::EvalReport ev = train::evaluate(model, ablation, docs, opts);

  nlohmann::ordered_json j;
  j["documents"] = ev.predictions.size();
  j["eval_f1"] = ev.f1.f1;
  j["mean_gate"] = ev.mean_gate;
  j["mean_conf"] = ev.mean_conf;

  nlohmann::ordered_json profile = nlohmann::ordered_json::object();
  for (Eigen::Index k = 0; k < ev.kl_profile.cols(); ++k)
    profile[std::to_string(k)] = ev.kl_profile(0, k);
  j["kl_profile"] = profile;
  if (ev.kl_profile.size() > 0) {
    const auto& s = ev.kl_split;
    j["kl_signal_noise"] = {{"signal_dims", s.signal_dims},
                            {"noise_dims", s.noise_dims},
                            {"signal_mean", s.signal_mean},
                            {"noise_mean", s.noise_mean},
                            {"ratio", std::isfinite(s.ratio) ? nlohmann::ordered_json(s.ratio)
                                                             : nlohmann::ordered_json(nullptr)}};
  } else {
    j["kl_signal_noise"] = nullptr;
  }

  double gate_min = 1.0, gate_max = 0.0;
  for (const auto& g : ev.gates)
    for (double x : g) gate_min = std::min(gate_min, x), gate_max = std::max(gate_max, x);
  j["gate_range"] = {gate_min, gate_max};
  j["gates"] = ev.gates;
  j["alignment_entropy"] = ev.confs;

  nlohmann::ordered_json mv;
  if (!ablation.disable_ot) {
    mv["max_solver"] = *std::max_element(ev.solver_violations.begin(), ev.solver_violations.end());
    mv["max_forward"] = *std::max_element(ev.plan_violations.begin(), ev.plan_violations.end());
    mv["max_solver_iterations"] =
        *std::max_element(ev.solver_iterations.begin(), ev.solver_iterations.end());
    mv["solver"] = ev.solver_violations;
    mv["forward"] = ev.plan_violations;
  }
  j["marginal_violation"] = mv;
  return j;
}

}  // namespace otfuse::diag
