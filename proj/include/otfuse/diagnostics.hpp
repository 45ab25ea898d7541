#pragma once

// Whole-model gradient verification and post-training diagnostic reports.

#include "otfuse/gradcheck.hpp"
#include "otfuse/model.hpp"
#include "otfuse/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace otfuse::diag {

inline constexpr double kGradientTolerance = 1e-4;

struct MicroInstance {
  model::Model model;
  synth::DocInputs inputs;
  Mat epsilon;  // frozen reparameterisation noise
  double beta = 0.5;
};

// 4 tokens, 6 patches, d = 8, 2 heads, a fixed number of Sinkhorn iterations
// and randomised parameters (so the gate and bottleneck gradients are not
// trivially zero).
MicroInstance make_micro_instance(std::uint64_t seed);

// Mean per-token loss (task + beta * KL) of the micro instance.
ad::LossBuilder micro_loss(const MicroInstance& instance);

struct GradientSuiteReport {
  std::vector<ad::GroupError> groups;  // model parameters, then "op:<name>" primitives
  double max_rel_error = 0.0;
  bool passed = false;
  std::vector<std::string> failing;  // group names above the tolerance
};

GradientSuiteReport run_gradient_suite(std::uint64_t seed = 1);
std::string format_gradient_report(const GradientSuiteReport& report);

// Per-dim KL profile, per-token gates and alignment entropies and
// transport-plan marginal violations over `docs`.
nlohmann::ordered_json diagnose(const model::Model& model, const model::Ablation& ablation,
                                const std::vector<synth::SynthDocument>& docs, int workers = 1);

}  // namespace otfuse::diag
