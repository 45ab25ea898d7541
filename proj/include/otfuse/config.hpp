#pragma once

// Experiment configuration: generator, model and training settings in one
// flat JSON object. Unknown keys are rejected by name; missing keys keep
// their defaults.

#include "otfuse/fusion_gate.hpp"
#include "otfuse/synthdoc.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace otfuse {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int model_dim = 32;
  int heads = 4;
  int max_len = 32;
  double tau = 0.1;
  int sinkhorn_iters = 200;  // max unrolled iterations per forward pass
  double sinkhorn_tol = 1e-6;
  double lambda_init = 0.1;
  fusion::OtAggregation ot_aggregation = fusion::OtAggregation::Modulated;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 12;
  double learning_rate = 1e-3;
  double beta = 1e-3;
  double beta_warmup_fraction = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool disable_ot = false;
  bool disable_vib = false;
  bool disable_gate = false;
  int workers = 1;
  int eval_docs = 128;  // the last eval_docs documents form the eval split
  int ablation_seeds = 5;
};

struct ExperimentConfig {
  synth::GeneratorConfig generator;
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
// Starts from `base` and overrides every key present in `j`.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::string& path);

}  // namespace otfuse
