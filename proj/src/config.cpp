#include "otfuse/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>

namespace otfuse {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

template <typename T>
void read(const json& v, const std::string& key, T& out) {
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

#define OTFUSE_FIELD(key, member) \
  {key, [](ExperimentConfig& c, const json& v, const std::string& k) { read(v, k, c.member); }}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      OTFUSE_FIELD("n_docs", generator.n_docs),
      OTFUSE_FIELD("min_tokens", generator.min_tokens),
      OTFUSE_FIELD("max_tokens", generator.max_tokens),
      OTFUSE_FIELD("grid_size", generator.grid_size),
      OTFUSE_FIELD("vocab_size", generator.vocab_size),
      OTFUSE_FIELD("visual_cue_strength", generator.visual_cue_strength),
      OTFUSE_FIELD("patch_dim", generator.patch_dim),
      OTFUSE_FIELD("noise_dims", generator.noise_dims),
      OTFUSE_FIELD("data_seed", generator.seed),
      OTFUSE_FIELD("model_dim", model.model_dim),
      OTFUSE_FIELD("heads", model.heads),
      OTFUSE_FIELD("max_len", model.max_len),
      OTFUSE_FIELD("tau", model.tau),
      OTFUSE_FIELD("sinkhorn_iters", model.sinkhorn_iters),
      OTFUSE_FIELD("sinkhorn_tol", model.sinkhorn_tol),
      OTFUSE_FIELD("lambda_init", model.lambda_init),
      {"ot_aggregation_mode",
       [](ExperimentConfig& c, const json& v, const std::string& k) {
         std::string s;
         read(v, k, s);
         try {
           c.model.ot_aggregation = fusion::ot_aggregation_from_string(s);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      OTFUSE_FIELD("epochs", train.epochs),
      OTFUSE_FIELD("batch_size", train.batch_size),
      OTFUSE_FIELD("learning_rate", train.learning_rate),
      OTFUSE_FIELD("beta", train.beta),
      OTFUSE_FIELD("beta_warmup_fraction", train.beta_warmup_fraction),
      OTFUSE_FIELD("adam_beta1", train.adam_beta1),
      OTFUSE_FIELD("adam_beta2", train.adam_beta2),
      OTFUSE_FIELD("adam_eps", train.adam_eps),
      OTFUSE_FIELD("seed", train.seed),
      OTFUSE_FIELD("disable_ot", train.disable_ot),
      OTFUSE_FIELD("disable_vib", train.disable_vib),
      OTFUSE_FIELD("disable_gate", train.disable_gate),
      OTFUSE_FIELD("workers", train.workers),
      OTFUSE_FIELD("eval_docs", train.eval_docs),
      OTFUSE_FIELD("ablation_seeds", train.ablation_seeds),
  };
  return table;
}

#undef OTFUSE_FIELD

}  // namespace

void ExperimentConfig::validate() const {
  try {
    generator.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& m = model;
  require(m.model_dim >= 1, "model_dim must be >= 1");
  require(m.heads >= 1 && m.model_dim % m.heads == 0,
          "model_dim " + std::to_string(m.model_dim) + " is not divisible by heads " +
              std::to_string(m.heads));
  require(m.max_len >= 1, "max_len must be >= 1");
  require(m.tau > 0.0 && std::isfinite(m.tau), "tau must be > 0");
  require(m.sinkhorn_iters >= 1, "sinkhorn_iters must be >= 1");
  require(m.sinkhorn_tol >= 0.0, "sinkhorn_tol must be >= 0");
  require(std::isfinite(m.lambda_init), "lambda_init must be finite");
  const auto& t = train;
  require(t.epochs >= 1, "epochs must be >= 1");
  require(t.batch_size >= 1, "batch_size must be >= 1");
  // lr = 0 is allowed as a frozen-parameter control run
  require(t.learning_rate >= 0.0 && std::isfinite(t.learning_rate),
          "learning_rate must be finite and >= 0");
  require(t.beta >= 0.0 && std::isfinite(t.beta), "beta must be finite and >= 0");
  require(t.beta_warmup_fraction >= 0.0 && t.beta_warmup_fraction <= 1.0,
          "beta_warmup_fraction must lie in [0, 1]");
  require(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
  require(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
  require(t.adam_eps > 0.0, "adam_eps must be > 0");
  require(t.workers >= 1, "workers must be >= 1");
  require(t.eval_docs >= 1 && t.eval_docs < generator.n_docs,
          "eval_docs must be >= 1 and below n_docs");
  require(t.ablation_seeds >= 1, "ablation_seeds must be >= 1");
}

json to_json(const ExperimentConfig& c) {
  return {
      {"n_docs", c.generator.n_docs},
      {"min_tokens", c.generator.min_tokens},
      {"max_tokens", c.generator.max_tokens},
      {"grid_size", c.generator.grid_size},
      {"vocab_size", c.generator.vocab_size},
      {"visual_cue_strength", c.generator.visual_cue_strength},
      {"patch_dim", c.generator.patch_dim},
      {"noise_dims", c.generator.noise_dims},
      {"data_seed", c.generator.seed},
      {"model_dim", c.model.model_dim},
      {"heads", c.model.heads},
      {"max_len", c.model.max_len},
      {"tau", c.model.tau},
      {"sinkhorn_iters", c.model.sinkhorn_iters},
      {"sinkhorn_tol", c.model.sinkhorn_tol},
      {"lambda_init", c.model.lambda_init},
      {"ot_aggregation_mode", fusion::to_string(c.model.ot_aggregation)},
      {"epochs", c.train.epochs},
      {"batch_size", c.train.batch_size},
      {"learning_rate", c.train.learning_rate},
      {"beta", c.train.beta},
      {"beta_warmup_fraction", c.train.beta_warmup_fraction},
      {"adam_beta1", c.train.adam_beta1},
      {"adam_beta2", c.train.adam_beta2},
      {"adam_eps", c.train.adam_eps},
      {"seed", c.train.seed},
      {"disable_ot", c.train.disable_ot},
      {"disable_vib", c.train.disable_vib},
      {"disable_gate", c.train.disable_gate},
      {"workers", c.train.workers},
      {"eval_docs", c.train.eval_docs},
      {"ablation_seeds", c.train.ablation_seeds},
  };
}

ExperimentConfig config_from_json(const json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c = base;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value, key);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace otfuse
