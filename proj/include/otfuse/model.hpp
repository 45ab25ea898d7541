#pragma once

// The full tagging model: toy encoder -> multi-head OT alignment and
// cross-attention -> confidence gate -> variational bottleneck -> classifier.
// Parameters are kept as an ordered list of named tensors.

#include "otfuse/autodiff.hpp"
#include "otfuse/config.hpp"
#include "otfuse/synthdoc.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace otfuse::model {

struct Ablation {
  bool disable_ot = false;
  bool disable_vib = false;
  bool disable_gate = false;
};

Ablation ablation_of(const TrainConfig& train);

// Tensor positions inside Model::tensors.
struct Layout {
  std::size_t embedding, w_tok, w_patch;
  std::vector<std::size_t> head_t, head_v, head_lambda;
  std::size_t w_q, w_k, w_v, w_o;
  std::size_t w_g, b_g;
  std::size_t w_mu, b_mu, w_sigma, b_sigma, w_c, b_c;
};

struct Model {
  ModelConfig config;
  int vocab_size = 0;
  int patch_dim = 0;
  int num_classes = 0;
  std::vector<std::string> names;
  std::vector<Mat> tensors;
  Layout layout{};

  std::size_t index(const std::string& name) const;  // throws on unknown names
  const Mat& get(const std::string& name) const { return tensors[index(name)]; }
  Mat& get(const std::string& name) { return tensors[index(name)]; }
  std::size_t parameter_count() const;
};

Model init_model(const ModelConfig& config, int vocab_size, int patch_dim, std::uint64_t seed);
Model init_model(const ExperimentConfig& config, std::uint64_t seed);

// Everything one document contributes to the loss plus the diagnostics the
// reports need. ce_sum and kl_sum are sums over the document's tokens.
struct DocOutputs {
  ad::Var ce_sum;
  ad::Var kl_sum;
  Mat probs;      // n x |C|
  Mat gate;       // n x 1
  Mat conf;       // n x 1
  Mat mu;         // n x d_z
  Mat log_var;    // n x d_z
  Mat plan;       // n x M head-averaged plan (empty with the OT path off)
  std::vector<Mat> head_costs;  // per-head n x M cost matrices
  int sinkhorn_iterations = 0;  // max over heads
  double plan_violation = 0.0;  // max over heads of the unrolled plans' marginal violation
};

// Builds the forward pass on `tape` with `params` as the parameter nodes
// (same order as Model::tensors). With `epsilon` null the latent is the
// posterior mean; otherwise it must be n x d_z noise.
DocOutputs forward(ad::Tape& tape, const std::vector<ad::Var>& params, const Model& model,
                   const Ablation& ablation, const synth::DocInputs& inputs, const Mat* epsilon);

// Binary model file: magic, version, config JSON, named tensors stored as
// u32 rows, u32 cols and little-endian f64 values.
inline constexpr std::uint32_t kModelFileVersion = 1;
void save_model(const Model& model, const nlohmann::json& run_config, const std::string& path);
struct LoadedModel {
  Model model;
  nlohmann::json run_config;
};
LoadedModel load_model(const std::string& path);

}  // namespace otfuse::model
