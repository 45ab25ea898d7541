// otfuse command-line entry point: generate, train, ablate, diagnose,
// check-gradients.

#include "otfuse/config.hpp"
#include "otfuse/diagnostics.hpp"
#include "otfuse/model.hpp"
#include "otfuse/synthdoc.hpp"
#include "otfuse/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifndef OTFUSE_VERSION
#define OTFUSE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace otfuse;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kNumerical = 2 };

// Raised for bad command-line usage that CLI11 itself does not catch.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out;
  std::optional<int> workers;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

ordered_json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out must name a directory");
  fs::create_directories(dir);
}

ExperimentConfig base_config(const Globals& g) {
  return g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
}

ordered_json dataset_entry(const std::string& path) {
  return {{"path", fs::absolute(path).lexically_normal().string()},
          {"checksum", synth::hex64(synth::file_checksum(path))}};
}

ordered_json manifest(const std::string& command, const ExperimentConfig& cfg, std::uint64_t seed,
                      const ordered_json& datasets) {
  ordered_json m;
  m["command"] = command;
  m["version"] = OTFUSE_VERSION;
  m["seed"] = seed;
  m["created_at"] = utc_now();
  m["datasets"] = datasets;
  m["config"] = to_json(cfg);
  return m;
}

// Training-style commands share config resolution: manifest replay or
// --config, then command-line overrides.
struct RunSetup {
  std::string manifest_path;
  std::string data_path;
  std::optional<int> epochs;
  bool disable_ot = false, disable_vib = false, disable_gate = false;
};

ExperimentConfig resolve_run_config(const Globals& g, RunSetup& s) {
  ExperimentConfig cfg;
  if (!s.manifest_path.empty()) {
    const ordered_json m = read_json(s.manifest_path);
    if (!m.contains("config") || !m.contains("datasets") || m["datasets"].empty())
      throw std::runtime_error(s.manifest_path + ": not a run manifest");
    cfg = config_from_json(m["config"]);
    const auto& ds = m["datasets"][0];
    if (s.data_path.empty()) s.data_path = ds["path"].get<std::string>();
    if (!fs::exists(s.data_path))
      throw std::runtime_error("dataset '" + s.data_path + "' from the manifest does not exist");
    const std::string sum = synth::hex64(synth::file_checksum(s.data_path));
    if (sum != ds["checksum"].get<std::string>())
      throw std::runtime_error("dataset '" + s.data_path + "' checksum " + sum +
                               " does not match the manifest (" + ds["checksum"].get<std::string>() +
                               ")");
  } else {
    cfg = base_config(g);
  }
  if (s.data_path.empty()) throw UsageError("--data is required (or --manifest)");
  if (!fs::exists(s.data_path)) throw std::runtime_error("dataset '" + s.data_path + "' not found");
  if (g.seed) cfg.train.seed = *g.seed;
  if (g.workers) cfg.train.workers = *g.workers;
  if (s.epochs) cfg.train.epochs = *s.epochs;
  if (s.disable_ot) cfg.train.disable_ot = true;
  if (s.disable_vib) cfg.train.disable_vib = true;
  if (s.disable_gate) cfg.train.disable_gate = true;
  return cfg;
}

std::vector<synth::SynthDocument> load_docs(const std::string& path, const ExperimentConfig& cfg) {
  auto docs = synth::load_jsonl(path);
  for (const auto& d : docs)
    for (const auto& t : d.tokens)
      if (t.id < 0 || t.id >= cfg.generator.vocab_size)
        throw std::runtime_error("dataset doc " + std::to_string(d.doc_id) + ": token id " +
                                 std::to_string(t.id) + " outside vocab_size " +
                                 std::to_string(cfg.generator.vocab_size));
  if (static_cast<int>(docs.size()) <= cfg.train.eval_docs)
    throw std::runtime_error("dataset has " + std::to_string(docs.size()) +
                             " documents, need more than eval_docs = " +
                             std::to_string(cfg.train.eval_docs));
  return docs;
}

// ---- commands ----

int cmd_generate(const Globals& g) {
  ExperimentConfig cfg = base_config(g);
  if (g.seed) cfg.generator.seed = *g.seed;
  cfg.validate();
  const std::string out = g.out.empty() ? "data.jsonl" : g.out;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  const auto docs = synth::generate(cfg.generator);
  synth::save_jsonl(docs, out);
  const ordered_json ds = dataset_entry(out);
  write_json(out + ".manifest.json",
             manifest("generate", cfg, cfg.generator.seed, ordered_json::array({ds})));
  std::cout << "wrote " << docs.size() << " documents to " << out << '\n'
            << "checksum " << ds["checksum"].get<std::string>() << '\n';
  return kOk;
}

int cmd_train(const Globals& g, RunSetup s) {
  ExperimentConfig cfg = resolve_run_config(g, s);
  cfg.validate();
  const std::string dir = g.out.empty() ? "run" : g.out;
  ensure_dir(dir);
  const auto docs = load_docs(s.data_path, cfg);
  write_json(fs::path(dir) / "manifest.json",
             manifest("train", cfg, cfg.train.seed, ordered_json::array({dataset_entry(s.data_path)})));

  std::vector<synth::SynthDocument> train_docs, eval_docs;
  train::split_dataset(docs, cfg.train.eval_docs, train_docs, eval_docs);

  std::ofstream metrics(fs::path(dir) / "metrics.jsonl");
  if (!metrics) throw std::runtime_error("cannot write metrics in '" + dir + "'");
  const auto on_epoch = [&](const train::EpochMetrics& m) {
    const std::string line = train::metrics_line(m);
    metrics << line << '\n' << std::flush;
    std::cerr << line << '\n';
  };

  train::TrainResult r;
  try {
    r = train::train(cfg, train_docs, eval_docs, on_epoch);
  } catch (const train::DivergenceError& e) {
    ordered_json summary;
    summary["status"] = "diverged";
    summary["error"] = e.what();
    summary["finite_epochs"] = e.history().size();
    summary["finished_at"] = utc_now();
    write_json(fs::path(dir) / "summary.json", summary);
    throw;
  }
  model::save_model(r.model, to_json(cfg), (fs::path(dir) / "model.bin").string());

  ordered_json summary;
  summary["status"] = "ok";
  summary["epochs"] = r.history.size();
  summary["eval_f1"] = r.final_eval.f1.f1;
  summary["mean_gate"] = r.final_eval.mean_gate;
  summary["mean_alignment_entropy"] = r.final_eval.mean_conf;
  if (r.final_eval.kl_profile.size() > 0) {
    std::vector<double> profile(r.final_eval.kl_profile.data(),
                                r.final_eval.kl_profile.data() + r.final_eval.kl_profile.size());
    summary["kl_profile"] = profile;
    summary["kl_signal_noise_ratio"] = r.final_eval.kl_split.ratio;
  }
  summary["wall_seconds"] = r.wall_seconds;
  summary["finished_at"] = utc_now();
  write_json(fs::path(dir) / "summary.json", summary);
  std::cout << "eval F1 " << r.final_eval.f1.f1 << " after " << r.history.size() << " epochs, "
            << r.wall_seconds << " s; artifacts in " << dir << '\n';
  return kOk;
}

int cmd_ablate(const Globals& g, RunSetup s) {
  ExperimentConfig cfg = resolve_run_config(g, s);
  cfg.validate();
  const std::string dir = g.out.empty() ? "ablation" : g.out;
  ensure_dir(dir);
  fs::create_directories(fs::path(dir) / "runs");
  const auto docs = load_docs(s.data_path, cfg);

  ordered_json m = manifest("ablate", cfg, cfg.train.seed, ordered_json::array({dataset_entry(s.data_path)}));
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < cfg.train.ablation_seeds; ++k) seeds.push_back(cfg.train.seed + k);
  m["seeds"] = seeds;
  m["variants"] = train::ablation_variants();
  write_json(fs::path(dir) / "manifest.json", m);

  const auto on_run = [&](const std::string& variant, std::uint64_t seed, const train::TrainResult& r) {
    std::ofstream out(fs::path(dir) / "runs" / (variant + "_seed" + std::to_string(seed) + ".jsonl"));
    for (const auto& e : r.history) out << train::metrics_line(e) << '\n';
    std::cerr << variant << " seed " << seed << ": eval F1 " << r.final_eval.f1.f1 << '\n';
  };
  const train::AblationTable table = train::run_ablation_suite(cfg, docs, train::ablation_variants(), on_run);
  write_json(fs::path(dir) / "ablation.json", train::to_json(table));
  const std::string text = train::format_table(table);
  std::ofstream(fs::path(dir) / "ablation.txt") << text;
  std::cout << text;
  return kOk;
}

int cmd_diagnose(const Globals& g, const std::string& model_path, const std::string& data_path,
                 bool all_docs) {
  const model::LoadedModel loaded = model::load_model(model_path);
  ExperimentConfig cfg = config_from_json(loaded.run_config);
  if (g.workers) cfg.train.workers = *g.workers;
  auto docs = synth::load_jsonl(data_path);
  if (!all_docs && static_cast<int>(docs.size()) > cfg.train.eval_docs) {
    std::vector<synth::SynthDocument> tr, ev;
    train::split_dataset(docs, cfg.train.eval_docs, tr, ev);
    docs = std::move(ev);
  }
  if (docs.empty()) throw std::runtime_error("no documents to diagnose");
  ordered_json report =
      diag::diagnose(loaded.model, model::ablation_of(cfg.train), docs, cfg.train.workers);
  report["model"] = model_path;
  report["dataset"] = dataset_entry(data_path);

  if (g.out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_json(g.out, report);
  }
  const auto& kl = report["kl_signal_noise"];
  if (kl.is_null())
    std::cerr << "kl signal/noise ratio: n/a (bottleneck disabled)\n";
  else
    std::cerr << "kl signal/noise ratio: " << kl["ratio"].dump() << '\n';
  std::cerr << "gate range: " << report["gate_range"].dump() << '\n';
  if (report["marginal_violation"].contains("max_solver"))
    std::cerr << "max marginal violation: " << report["marginal_violation"]["max_solver"].dump()
              << " (solver), " << report["marginal_violation"]["max_forward"].dump()
              << " (forward pass)\n";
  return kOk;
}

int cmd_check_gradients(const Globals& g) {
  const auto report = diag::run_gradient_suite(g.seed.value_or(1));
  std::cout << diag::format_gradient_report(report);
  return report.passed ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal OT fusion with a variational bottleneck on synthetic documents"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", OTFUSE_VERSION);

  Globals g;
  std::uint64_t seed = 0;
  int workers = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding the config");
  app.add_option("--config", g.config_path, "Flat JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output file (generate, diagnose) or directory (train, ablate)");
  auto* workers_opt =
      app.add_option("--workers", workers, "Worker threads; results do not depend on it")
          ->check(CLI::Range(1, 256));

  auto* gen = app.add_subcommand("generate", "Write a synthetic JSONL dataset and its manifest");

  RunSetup train_setup, ablate_setup;
  const auto add_run_options = [](CLI::App* sub, RunSetup& s) {
    sub->add_option("--data", s.data_path, "JSONL dataset");
    sub->add_option("--manifest", s.manifest_path, "Replay the config and dataset of a manifest")
        ->check(CLI::ExistingFile);
    sub->add_option("--epochs", s.epochs, "Override the number of epochs")->check(CLI::PositiveNumber);
    sub->add_flag("--disable-ot", s.disable_ot, "Drop the OT branch");
    sub->add_flag("--disable-vib", s.disable_vib, "Use the posterior mean, no KL term");
    sub->add_flag("--disable-gate", s.disable_gate, "Fix the gate at 0.5");
  };
  auto* tr = app.add_subcommand("train", "Train one model; writes metrics, model and manifest");
  add_run_options(tr, train_setup);
  auto* ab = app.add_subcommand("ablate", "Train {full, no_ot, no_vib, no_gate} over several seeds");
  add_run_options(ab, ablate_setup);

  std::string model_path, data_path;
  bool all_docs = false;
  auto* dg = app.add_subcommand("diagnose", "KL profile, gates, alignment entropies, plan violations");
  dg->add_option("--model", model_path, "Model file")->required();
  dg->add_option("--data", data_path, "JSONL dataset")->required();
  dg->add_flag("--all-docs", all_docs, "Use every document instead of the eval split");

  auto* cg = app.add_subcommand("check-gradients", "Finite-difference check of every gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }
  if (*seed_opt) g.seed = seed;
  if (*workers_opt) g.workers = workers;

  try {
    if (*gen) return cmd_generate(g);
    if (*tr) return cmd_train(g, train_setup);
    if (*ab) return cmd_ablate(g, ablate_setup);
    if (*dg) return cmd_diagnose(g, model_path, data_path, all_docs);
    if (*cg) return cmd_check_gradients(g);
  } catch (const train::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kValidation;
}
