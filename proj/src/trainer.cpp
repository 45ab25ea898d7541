#include "otfuse/trainer.hpp"

#include "otfuse/ot_align.hpp"
#include "otfuse/rng.hpp"
#include "otfuse/vib.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <sstream>
#include <iterator>
#include <random>
#include <thread>
#include <tuple>

namespace otfuse::train {

using synth::DocInputs;
using synth::SynthDocument;

namespace {

// Stream tags for derive_seed, so init, shuffling and noise never share draws.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

// Runs fn(i) for i in [0, count) on up to `workers` threads. Results must be
// written to per-index slots; the first exception (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Mat draw_noise(std::uint64_t seed, std::int64_t doc_id, std::int64_t step, Eigen::Index rows,
               Eigen::Index cols) {
  auto rng = make_stream(seed, kNoiseStream, static_cast<std::uint64_t>(doc_id),
                         static_cast<std::uint64_t>(step));
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat eps(rows, cols);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  return eps;
}

std::vector<DocInputs> prepare(const model::Model& m, const std::vector<SynthDocument>& docs,
                               std::vector<std::int64_t>& ids) {
  std::vector<DocInputs> out;
  ids.clear();
  for (const auto& d : docs) {
    DocInputs in = synth::doc_inputs(d, m.vocab_size, m.config.max_len);
    if (in.targets.empty()) continue;
    out.push_back(std::move(in));
    ids.push_back(d.doc_id);
  }
  return out;
}

bool all_finite(const std::vector<Mat>& ms) {
  for (const auto& m : ms)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace

// ---- span F1 ---------------------------------------------------------------

bool Span::operator<(const Span& o) const {
  return std::tie(start, end, type) < std::tie(o.start, o.end, o.type);
}

std::vector<Span> extract_spans(const std::vector<int>& tags) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const int t = tags[static_cast<std::size_t>(i)];
    if (t < 0 || t >= synth::num_tags())
      throw std::invalid_argument("extract_spans: tag index " + std::to_string(t) + " out of range");
    const int type = synth::entity_of(t);
    const bool continues = synth::is_inside(t) && open && cur.type == type;
    if (continues) {
      cur.end = i;
      continue;
    }
    if (open) spans.push_back(cur);
    open = type >= 0;
    if (open) cur = {i, i, type};
  }
  if (open) spans.push_back(cur);
  return spans;
}

F1Score evaluate_f1(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& gold) {
  if (predictions.size() != gold.size())
    throw std::invalid_argument("evaluate_f1: " + std::to_string(predictions.size()) +
                                " predicted sequences vs " + std::to_string(gold.size()) + " gold");
  F1Score s;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (predictions[k].size() != gold[k].size())
      throw std::invalid_argument("evaluate_f1: sequence " + std::to_string(k) + " has " +
                                  std::to_string(predictions[k].size()) + " predicted tags and " +
                                  std::to_string(gold[k].size()) + " gold tags");
    auto p = extract_spans(predictions[k]);
    auto g = extract_spans(gold[k]);
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    std::vector<Span> both;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
    s.true_positives += both.size();
    s.predicted += p.size();
    s.gold += g.size();
  }
  const auto tp = static_cast<double>(s.true_positives);
  s.precision = s.predicted ? tp / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold ? tp / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

F1Score text_only_oracle(const std::vector<SynthDocument>& train_docs,
                         const std::vector<SynthDocument>& eval_docs) {
  if (eval_docs.empty()) throw std::invalid_argument("text_only_oracle: empty eval set");
  const int C = synth::num_tags();
  std::map<int, std::vector<int>> counts;
  std::vector<int> overall(static_cast<std::size_t>(C), 0);
  for (const auto& d : train_docs)
    for (const auto& t : d.tokens) {
      auto& c = counts[t.id];
      c.resize(static_cast<std::size_t>(C), 0);
      ++c[static_cast<std::size_t>(t.label)];
      ++overall[static_cast<std::size_t>(t.label)];
    }
  auto argmax = [](const std::vector<int>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  const int fallback = argmax(overall);
  std::vector<std::vector<int>> pred, gold;
  for (const auto& d : eval_docs) {
    std::vector<int> p, g;
    for (const auto& t : d.tokens) {
      const auto it = counts.find(t.id);
      p.push_back(it == counts.end() ? fallback : argmax(it->second));
      g.push_back(t.label);
    }
    pred.push_back(std::move(p));
    gold.push_back(std::move(g));
  }
  return evaluate_f1(pred, gold);
}

// ---- evaluation ------------------------------------------------------------

KlSplit kl_signal_noise_split(const Mat& kl_profile, const Mat& mu, const std::vector<int>& labels) {
  const Eigen::Index dz = kl_profile.cols();
  if (mu.cols() != dz || mu.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("kl_signal_noise_split: shapes do not agree");
  if (dz < 2 || mu.rows() == 0)
    throw std::invalid_argument("kl_signal_noise_split: need >= 2 dims and >= 1 token");
  const int C = synth::num_tags();
  Mat class_sum = Mat::Zero(C, dz);
  std::vector<double> class_n(static_cast<std::size_t>(C), 0.0);
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    class_sum.row(labels[static_cast<std::size_t>(i)]) += mu.row(i);
    class_n[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  const Mat overall = mu.colwise().mean();
  std::vector<double> between(static_cast<std::size_t>(dz), 0.0);
  const auto N = static_cast<double>(mu.rows());
  for (int c = 0; c < C; ++c) {
    const double nc = class_n[static_cast<std::size_t>(c)];
    if (nc == 0.0) continue;
    for (Eigen::Index k = 0; k < dz; ++k) {
      const double diff = class_sum(c, k) / nc - overall(0, k);
      between[static_cast<std::size_t>(k)] += nc / N * diff * diff;
    }
  }
  std::vector<int> order(static_cast<std::size_t>(dz));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return between[static_cast<std::size_t>(a)] > between[static_cast<std::size_t>(b)];
  });
  KlSplit s;
  const auto half = static_cast<std::size_t>(dz / 2);
  s.signal_dims.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  s.noise_dims.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  for (int k : s.signal_dims) s.signal_mean += kl_profile(0, k);
  for (int k : s.noise_dims) s.noise_mean += kl_profile(0, k);
  s.signal_mean /= static_cast<double>(s.signal_dims.size());
  s.noise_mean /= static_cast<double>(s.noise_dims.size());
  s.ratio = s.noise_mean > 0.0 ? s.signal_mean / s.noise_mean
                               : std::numeric_limits<double>::infinity();
  return s;
}

EvalReport evaluate(const model::Model& model, const model::Ablation& ablation,
                    const std::vector<SynthDocument>& docs, const EvalOptions& options) {
  std::vector<std::int64_t> ids;
  const std::vector<DocInputs> inputs = prepare(model, docs, ids);
  const std::size_t n_docs = inputs.size();
  std::vector<model::DocOutputs> outs(n_docs);
  std::vector<double> solver_violation(n_docs, 0.0);
  std::vector<int> solver_iters(n_docs, 0);

  parallel_for(n_docs, options.workers, [&](std::size_t k) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    params.reserve(model.tensors.size());
    for (const auto& t : model.tensors) params.push_back(tape.constant(t));
    outs[k] = model::forward(tape, params, model, ablation, inputs[k], nullptr);
    outs[k].ce_sum = {};
    outs[k].kl_sum = {};
    if (options.resolve_plans && !ablation.disable_ot) {
      const auto n = static_cast<Eigen::Index>(inputs[k].targets.size());
      const Mat a = ot::uniform_marginal(n, false);
      const Mat b = ot::uniform_marginal(inputs[k].patch_raw.rows(), true);
      for (const Mat& cost : outs[k].head_costs) {
        const auto plan = ot::sinkhorn(cost, a, b,
                                       {model.config.tau, options.resolve_max_iters, options.resolve_tol, true});
        solver_violation[k] = std::max(solver_violation[k], plan.marginal_violation);
        solver_iters[k] = std::max(solver_iters[k], plan.iterations_used);
      }
    }
  });

  EvalReport r;
  std::vector<std::vector<int>> gold;
  double gate_sum = 0.0, conf_sum = 0.0;
  std::size_t tokens = 0;
  Eigen::Index dz = model.get("vib.w_mu").cols();
  Mat all_mu(0, dz), all_lv(0, dz);
  std::vector<int> all_labels;
  for (std::size_t k = 0; k < n_docs; ++k) {
    const auto& o = outs[k];
    const auto& in = inputs[k];
    std::vector<int> pred;
    std::vector<double> g, c;
    for (Eigen::Index i = 0; i < o.probs.rows(); ++i) {
      Eigen::Index best = 0;
      o.probs.row(i).maxCoeff(&best);
      pred.push_back(static_cast<int>(best));
      g.push_back(o.gate(i, 0));
      c.push_back(o.conf(i, 0));
      gate_sum += o.gate(i, 0);
      conf_sum += o.conf(i, 0);
    }
    tokens += pred.size();
    r.predictions.push_back(std::move(pred));
    r.gates.push_back(std::move(g));
    r.confs.push_back(std::move(c));
    r.plan_violations.push_back(o.plan_violation);
    gold.push_back(in.targets);
    all_labels.insert(all_labels.end(), in.targets.begin(), in.targets.end());
    const Eigen::Index old = all_mu.rows();
    all_mu.conservativeResize(old + o.mu.rows(), Eigen::NoChange);
    all_lv.conservativeResize(old + o.mu.rows(), Eigen::NoChange);
    all_mu.bottomRows(o.mu.rows()) = o.mu;
    all_lv.bottomRows(o.mu.rows()) = o.log_var;
  }
  if (options.resolve_plans && !ablation.disable_ot) {
    r.solver_violations = solver_violation;
    r.solver_iterations = solver_iters;
  }
  r.f1 = evaluate_f1(r.predictions, gold);
  if (tokens > 0) {
    r.mean_gate = gate_sum / static_cast<double>(tokens);
    r.mean_conf = conf_sum / static_cast<double>(tokens);
  }
  if (!ablation.disable_vib && tokens > 0) {
    r.kl_profile = vib::per_dim_kl_profile({all_mu, all_lv, {}, {}});
    if (dz >= 2) r.kl_split = kl_signal_noise_split(r.kl_profile, all_mu, all_labels);
  }
  return r;
}

// ---- training --------------------------------------------------------------

nlohmann::ordered_json to_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["task_loss"] = m.task_loss;
  j["kl_loss"] = m.kl_loss;
  j["total_loss"] = m.total_loss;
  j["eval_f1"] = m.eval_f1;
  j["mean_gate"] = m.mean_gate;
  j["mean_conf"] = m.mean_conf;
  return j;
}

std::string metrics_line(const EpochMetrics& m) { return to_json(m).dump(); }

void split_dataset(const std::vector<SynthDocument>& docs, int eval_docs,
                   std::vector<SynthDocument>& train_docs, std::vector<SynthDocument>& eval_out) {
  if (eval_docs < 1 || static_cast<std::size_t>(eval_docs) >= docs.size())
    throw std::invalid_argument("split_dataset: eval_docs " + std::to_string(eval_docs) +
                                " must be >= 1 and below the " + std::to_string(docs.size()) +
                                " documents");
  const auto cut = docs.begin() + static_cast<std::ptrdiff_t>(docs.size() - eval_docs);
  train_docs.assign(docs.begin(), cut);
  eval_out.assign(cut, docs.end());
}

BatchGradient batch_gradient(const model::Model& model, const model::Ablation& ablation,
                             const std::vector<DocInputs>& inputs,
                             const std::vector<std::int64_t>& doc_ids, std::uint64_t seed,
                             std::int64_t step, double beta, int workers) {
  const std::size_t n = inputs.size();
  struct Slot {
    std::vector<Mat> grads;
    double ce = 0.0, kl = 0.0;
  };
  std::vector<Slot> slots(n);
  const Eigen::Index dz = model.get("vib.w_mu").cols();
  parallel_for(n, workers, [&](std::size_t k) {
    ad::Tape tape;
    std::vector<ad::Var> params;
    params.reserve(model.tensors.size());
    for (const auto& t : model.tensors) params.push_back(tape.variable(t));
    const auto rows = static_cast<Eigen::Index>(inputs[k].targets.size());
    const Mat eps = draw_noise(seed, doc_ids[k], step, rows, dz);
    const auto out =
        model::forward(tape, params, model, ablation, inputs[k], ablation.disable_vib ? nullptr : &eps);
    const ad::Var loss = ad::add(out.ce_sum, ad::scale(out.kl_sum, beta));
    tape.backward(loss);
    slots[k].ce = out.ce_sum.scalar();
    slots[k].kl = out.kl_sum.scalar();
    slots[k].grads.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = params[i].grad();
      slots[k].grads.push_back(g.size() ? g : Mat::Zero(params[i].rows(), params[i].cols()));
    }
  });

  BatchGradient bg;
  for (std::size_t i = 0; i < model.tensors.size(); ++i)
    bg.grads.push_back(Mat::Zero(model.tensors[i].rows(), model.tensors[i].cols()));
  // fixed summation order keeps results independent of the worker count
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < bg.grads.size(); ++i) bg.grads[i] += slots[k].grads[i];
    bg.task += slots[k].ce;
    bg.kl += slots[k].kl;
    bg.supervised += static_cast<double>(inputs[k].targets.size());
  }
  if (bg.supervised > 0.0) {
    for (auto& g : bg.grads) g /= bg.supervised;
    bg.task /= bg.supervised;
    bg.kl /= bg.supervised;
  }
  return bg;
}

model::Model initial_model(const ExperimentConfig& config) {
  return model::init_model(config, derive_seed(config.train.seed, kInitStream));
}

TrainResult train(const ExperimentConfig& config, const std::vector<SynthDocument>& train_docs,
                  const std::vector<SynthDocument>& eval_docs, const EpochCallback& on_epoch) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const TrainConfig& tc = config.train;
  const model::Ablation ablation = model::ablation_of(tc);

  TrainResult result;
  result.model = initial_model(config);
  model::Model& m = result.model;

  std::vector<std::int64_t> ids;
  const std::vector<DocInputs> inputs = prepare(m, train_docs, ids);
  if (inputs.empty()) throw std::invalid_argument("train: no training document has tokens");
  if (eval_docs.empty()) throw std::invalid_argument("train: empty eval set");

  std::vector<Mat> m1, m2;
  for (const auto& t : m.tensors) {
    m1.push_back(Mat::Zero(t.rows(), t.cols()));
    m2.push_back(Mat::Zero(t.rows(), t.cols()));
  }
  const auto batch = static_cast<std::size_t>(tc.batch_size);
  const std::size_t batches_per_epoch = (inputs.size() + batch - 1) / batch;
  const double total_steps = static_cast<double>(batches_per_epoch) * tc.epochs;
  const double warmup_steps = tc.beta_warmup_fraction * total_steps;
  const double beta_max = ablation.disable_vib ? 0.0 : tc.beta;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = make_stream(tc.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ce_total = 0.0, kl_total = 0.0, loss_total = 0.0, sup_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::vector<DocInputs> bin;
      std::vector<std::int64_t> bid;
      for (std::size_t k = start; k < stop; ++k) {
        bin.push_back(inputs[order[k]]);
        bid.push_back(ids[order[k]]);
      }
      const double beta = warmup_steps > 0.0
                              ? beta_max * std::min(1.0, static_cast<double>(step + 1) / warmup_steps)
                              : beta_max;
      const BatchGradient bg = batch_gradient(m, ablation, bin, bid, tc.seed, step, beta, tc.workers);
      const double total = vib::total_loss(bg.task, bg.kl, beta);
      if (!std::isfinite(total) || !all_finite(bg.grads))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(step) + " (loss " + std::to_string(total) + ")",
                              result.history);
      ce_total += bg.task * bg.supervised;
      kl_total += bg.kl * bg.supervised;
      loss_total += total * bg.supervised;
      sup_total += bg.supervised;

      ++step;
      const double c1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < m.tensors.size(); ++i) {
        const Mat& g = bg.grads[i];
        m1[i] = tc.adam_beta1 * m1[i] + (1.0 - tc.adam_beta1) * g;
        m2[i] = tc.adam_beta2 * m2[i] + (1.0 - tc.adam_beta2) * g.cwiseProduct(g);
        m.tensors[i].array() -= tc.learning_rate * (m1[i].array() / c1) /
                                ((m2[i].array() / c2).sqrt() + tc.adam_eps);
      }
    }

    result.final_eval = evaluate(m, ablation, eval_docs, {tc.workers});
    EpochMetrics em;
    em.epoch = epoch;
    em.task_loss = ce_total / sup_total;
    em.kl_loss = kl_total / sup_total;
    em.total_loss = loss_total / sup_total;
    em.eval_f1 = result.final_eval.f1.f1;
    em.mean_gate = result.final_eval.mean_gate;
    em.mean_conf = result.final_eval.mean_conf;
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---- ablations -------------------------------------------------------------

const AblationRow& AblationTable::row(const std::string& variant) const {
  for (const auto& r : rows)
    if (r.variant == variant) return r;
  throw std::out_of_range("ablation table has no row '" + variant + "'");
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"full", "no_ot", "no_vib", "no_gate"};
  return v;
}

ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant) {
  ExperimentConfig c = base;
  c.train.disable_ot = c.train.disable_vib = c.train.disable_gate = false;
  if (variant == "no_ot") c.train.disable_ot = true;
  else if (variant == "no_vib") c.train.disable_vib = true;
  else if (variant == "no_gate") c.train.disable_gate = true;
  else if (variant != "full") throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  return c;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AblationTable run_ablation_suite(const ExperimentConfig& base, const std::vector<SynthDocument>& docs,
                                 const std::vector<std::string>& variants, const RunCallback& on_run) {
  base.validate();
  std::vector<SynthDocument> train_docs, eval_docs;
  split_dataset(docs, base.train.eval_docs, train_docs, eval_docs);
  AblationTable table;
  table.text_only_f1 = text_only_oracle(train_docs, eval_docs).f1;
  for (const auto& variant : variants) {
    AblationRow row;
    row.variant = variant;
    for (int k = 0; k < base.train.ablation_seeds; ++k) {
      ExperimentConfig c = apply_variant(base, variant);
      c.train.seed = base.train.seed + static_cast<std::uint64_t>(k);
      const TrainResult r = train(c, train_docs, eval_docs);
      row.seeds.push_back(c.train.seed);
      row.f1.push_back(r.final_eval.f1.f1);
      if (!c.train.disable_vib) row.kl_ratio.push_back(r.final_eval.kl_split.ratio);
      if (on_run) on_run(variant, c.train.seed, r);
    }
    row.mean = mean_of(row.f1);
    row.stddev = stddev_of(row.f1);
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::ordered_json to_json(const AblationTable& table) {
  nlohmann::ordered_json j;
  j["text_only_f1"] = table.text_only_f1;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json row;
    row["variant"] = r.variant;
    row["f1_mean"] = r.mean;
    row["f1_std"] = r.stddev;
    row["seeds"] = r.seeds;
    row["f1"] = r.f1;
    nlohmann::ordered_json ratios = nlohmann::ordered_json::array();
    for (double x : r.kl_ratio) ratios.push_back(std::isfinite(x) ? nlohmann::ordered_json(x) : nullptr);
    row["kl_signal_noise_ratio"] = ratios;
    j["rows"].push_back(row);
  }
  return j;
}

std::string format_table(const AblationTable& table) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %10s %10s\n", "variant", "f1_mean", "f1_std");
  out << line;
  for (const auto& r : table.rows) {
    std::snprintf(line, sizeof line, "%-10s %10.4f %10.4f\n", r.variant.c_str(), r.mean, r.stddev);
    out << line;
  }
  std::snprintf(line, sizeof line, "%-10s %10.4f\n", "text_only", table.text_only_f1);
  out << line;
  return out.str();
}

}  // namespace otfuse::train
