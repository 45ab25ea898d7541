#pragma once

// Training, evaluation and ablations for the tagging model.

#include "otfuse/config.hpp"
#include "otfuse/model.hpp"
#include "otfuse/synthdoc.hpp"

#include "json.hpp"

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace otfuse::train {

// ---- span F1 ---------------------------------------------------------------

struct Span {
  int start = 0;  // inclusive
  int end = 0;    // inclusive
  int type = 0;   // entity class, see synth::entity_of

  bool operator==(const Span& o) const { return start == o.start && end == o.end && type == o.type; }
  bool operator<(const Span& o) const;
};

// BIO decoding: B-X opens a span, I-X extends an open X span and otherwise
// opens a new one, O closes.
std::vector<Span> extract_spans(const std::vector<int>& tags);

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

// Micro-averaged exact-match span F1 over documents.
F1Score evaluate_f1(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& gold);

// Majority label per token id fit on train_docs (unseen ids get the overall
// majority label), scored with span F1 on eval_docs.
F1Score text_only_oracle(const std::vector<synth::SynthDocument>& train_docs,
                         const std::vector<synth::SynthDocument>& eval_docs);

// ---- evaluation ------------------------------------------------------------

struct KlSplit {
  std::vector<int> signal_dims;  // latent dims ranked by between-class variance of mu
  std::vector<int> noise_dims;
  double signal_mean = 0.0;
  double noise_mean = 0.0;
  double ratio = std::numeric_limits<double>::infinity();
};

// Splits latent dims in half by the between-class variance of the posterior
// mean (top half = signal) and compares their mean KL.
KlSplit kl_signal_noise_split(const Mat& kl_profile, const Mat& mu, const std::vector<int>& labels);

struct EvalReport {
  F1Score f1;
  double mean_gate = 0.0;
  double mean_conf = 0.0;
  Mat kl_profile;  // 1 x d_z; empty when the bottleneck is disabled
  KlSplit kl_split;
  std::vector<std::vector<int>> predictions;
  std::vector<std::vector<double>> gates;  // per document, per token
  std::vector<std::vector<double>> confs;
  std::vector<double> plan_violations;  // per document, plans used by the forward pass
  std::vector<double> solver_violations;  // per document, heads re-solved to tolerance
  std::vector<int> solver_iterations;
};

struct EvalOptions {
  int workers = 1;
  bool resolve_plans = false;  // fill solver_violations / solver_iterations
  int resolve_max_iters = 100000;
  double resolve_tol = 1e-6;
};

EvalReport evaluate(const model::Model& model, const model::Ablation& ablation,
                    const std::vector<synth::SynthDocument>& docs, const EvalOptions& options = {});

// ---- training --------------------------------------------------------------

struct EpochMetrics {
  int epoch = 0;
  double task_loss = 0.0;
  double kl_loss = 0.0;
  double total_loss = 0.0;
  double eval_f1 = 0.0;
  double mean_gate = 0.0;
  double mean_conf = 0.0;
};

nlohmann::ordered_json to_json(const EpochMetrics& m);
std::string metrics_line(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  model::Model model;
  EvalReport final_eval;
  double wall_seconds = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::vector<EpochMetrics> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<EpochMetrics>& history() const { return history_; }

 private:
  std::vector<EpochMetrics> history_;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Splits docs into train and eval (the last `eval_docs` documents).
void split_dataset(const std::vector<synth::SynthDocument>& docs, int eval_docs,
                   std::vector<synth::SynthDocument>& train_docs,
                   std::vector<synth::SynthDocument>& eval_docs_out);

// Parameters before the first update for (config, seed).
model::Model initial_model(const ExperimentConfig& config);

TrainResult train(const ExperimentConfig& config,
                  const std::vector<synth::SynthDocument>& train_docs,
                  const std::vector<synth::SynthDocument>& eval_docs,
                  const EpochCallback& on_epoch = {});

// Gradient of the mean per-token loss of one batch at the given parameters,
// with noise drawn as during training step `step`. Exposed for tests.
struct BatchGradient {
  std::vector<Mat> grads;
  double task = 0.0;
  double kl = 0.0;
  double supervised = 0.0;
};
BatchGradient batch_gradient(const model::Model& model, const model::Ablation& ablation,
                             const std::vector<synth::DocInputs>& inputs,
                             const std::vector<std::int64_t>& doc_ids, std::uint64_t seed,
                             std::int64_t step, double beta, int workers);

// ---- ablations -------------------------------------------------------------

struct AblationRow {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<double> f1;
  std::vector<double> kl_ratio;  // empty for variants without the bottleneck
  double mean = 0.0;
  double stddev = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  double text_only_f1 = 0.0;

  const AblationRow& row(const std::string& variant) const;
};

const std::vector<std::string>& ablation_variants();  // full, no_ot, no_vib, no_gate
ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant);

using RunCallback =
    std::function<void(const std::string& variant, std::uint64_t seed, const TrainResult& result)>;

AblationTable run_ablation_suite(const ExperimentConfig& base,
                                 const std::vector<synth::SynthDocument>& docs,
                                 const std::vector<std::string>& variants = ablation_variants(),
                                 const RunCallback& on_run = {});

nlohmann::ordered_json to_json(const AblationTable& table);
std::string format_table(const AblationTable& table);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);  // sample standard deviation

}  // namespace otfuse::train
