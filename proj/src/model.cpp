#include "otfuse/model.hpp"

#include "otfuse/fusion_gate.hpp"
#include "otfuse/ot_align.hpp"
#include "otfuse/vib.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace otfuse::model {

static_assert(std::endian::native == std::endian::little,
              "model files are written in host order, which must be little-endian");

Ablation ablation_of(const TrainConfig& train) {
  return {train.disable_ot, train.disable_vib, train.disable_gate};
}

std::size_t Model::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("model has no tensor named '" + name + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

namespace {

class Builder {
 public:
  explicit Builder(Model& m) : m_(m) {}
  std::size_t add(const std::string& name, Mat value) {
    m_.names.push_back(name);
    m_.tensors.push_back(std::move(value));
    return m_.tensors.size() - 1;
  }

 private:
  Model& m_;
};

Mat gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

Model init_model(const ModelConfig& config, int vocab_size, int patch_dim, std::uint64_t seed) {
  if (config.heads < 1 || config.model_dim % config.heads != 0)
    throw std::invalid_argument("model_dim must be divisible by heads");
  Model m;
  m.config = config;
  m.vocab_size = vocab_size;
  m.patch_dim = patch_dim;
  m.num_classes = synth::num_tags();
  const int d = config.model_dim;
  const int dh = d / config.heads;
  const int dz = d;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));

  std::mt19937_64 rng(seed);
  const auto enc = synth::init_encoder(vocab_size, patch_dim, d, rng());
  Builder b(m);
  Layout& L = m.layout;
  L.embedding = b.add("encoder.embedding", enc.embedding);
  L.w_tok = b.add("encoder.w_tok", enc.w_tok);
  L.w_patch = b.add("encoder.w_patch", enc.w_patch);
  for (int h = 0; h < config.heads; ++h) {
    const std::string p = "ot.head" + std::to_string(h);
    L.head_t.push_back(b.add(p + ".w_t", gaussian(rng, d, dh, s)));
    L.head_v.push_back(b.add(p + ".w_v", gaussian(rng, d, dh, s)));
    L.head_lambda.push_back(b.add(p + ".lambda", Mat::Constant(1, 1, config.lambda_init)));
  }
  L.w_q = b.add("attention.w_q", gaussian(rng, d, d, s));
  L.w_k = b.add("attention.w_k", gaussian(rng, d, d, s));
  L.w_v = b.add("attention.w_v", gaussian(rng, d, d, s));
  L.w_o = b.add("attention.w_o", gaussian(rng, d, d, s));
  L.w_g = b.add("gate.w_g", Mat::Zero(2 * d + 1, 1));
  L.b_g = b.add("gate.bias", Mat::Zero(1, 1));
  L.w_mu = b.add("vib.w_mu", Mat::Zero(d, dz));
  L.b_mu = b.add("vib.b_mu", Mat::Zero(1, dz));
  L.w_sigma = b.add("vib.w_sigma", Mat::Zero(d, dz));
  L.b_sigma = b.add("vib.b_sigma", Mat::Zero(1, dz));
  L.w_c = b.add("vib.w_c", gaussian(rng, dz, m.num_classes, 1.0 / std::sqrt(static_cast<double>(dz))));
  L.b_c = b.add("vib.b_c", Mat::Zero(1, m.num_classes));
  return m;
}

Model init_model(const ExperimentConfig& config, std::uint64_t seed) {
  return init_model(config.model, config.generator.vocab_size, config.generator.patch_dim, seed);
}

DocOutputs forward(ad::Tape& tape, const std::vector<ad::Var>& p, const Model& model,
                   const Ablation& ablation, const synth::DocInputs& in, const Mat* epsilon) {
  const Layout& L = model.layout;
  const ModelConfig& cfg = model.config;
  const auto n = static_cast<Eigen::Index>(in.targets.size());
  if (n == 0) throw std::invalid_argument("forward: document has no tokens");
  const Eigen::Index M = in.patch_raw.rows();

  const synth::TapeFeatures feats = synth::encode(tape, in, {p[L.embedding], p[L.w_tok], p[L.w_patch]});
  const ad::Var& T = feats.T;
  const ad::Var& V = feats.V;

  DocOutputs out;
  ad::Var f_ot, conf;
  if (!ablation.disable_ot) {
    const ad::Var dist = tape.constant(ot::PositionGrid{in.token_pos, in.patch_pos}.distances());
    const Mat a = ot::uniform_marginal(n, false);
    const Mat bm = ot::uniform_marginal(M, true);
    const ot::SinkhornOptions opts{cfg.tau, cfg.sinkhorn_iters, cfg.sinkhorn_tol};
    ad::Var plan_sum;
    for (int h = 0; h < cfg.heads; ++h) {
      const ad::Var cost = ot::build_cost(ad::matmul(T, p[L.head_t[h]]),
                                          ad::matmul(V, p[L.head_v[h]]), dist,
                                          p[L.head_lambda[h]]);
      const auto solved = ot::sinkhorn(cost, a, bm, opts);
      out.head_costs.push_back(cost.value());
      out.sinkhorn_iterations = std::max(out.sinkhorn_iterations, solved.iterations_used);
      out.plan_violation = std::max(out.plan_violation, solved.marginal_violation);
      const ad::Var plan_h = ad::exp(solved.log_plan);
      plan_sum = h == 0 ? plan_h : ad::add(plan_sum, plan_h);
    }
    const ad::Var plan = ad::scale(plan_sum, 1.0 / cfg.heads);
    out.plan = plan.value();
    conf = ot::row_entropy_confidence(plan);
    f_ot = fusion::ot_aggregate(T, V, plan, cfg.ot_aggregation);
  } else {
    conf = tape.constant(Mat::Constant(n, 1, std::log(static_cast<double>(M))));
  }

  const ad::Var f_att =
      fusion::cross_attention(T, V, p[L.w_q], p[L.w_k], p[L.w_v], p[L.w_o], cfg.heads);
  const ad::Var fused = ablation.disable_ot ? f_att : fusion::fuse(f_att, f_ot);
  const ad::Var gate =
      ablation.disable_gate
          ? tape.constant(Mat::Constant(n, 1, 0.5))
          : fusion::gate_from_logits(fusion::gate_logits(T, fused, conf, p[L.w_g], p[L.b_g]));
  const ad::Var t_prime = fusion::gated_mix(T, fused, gate);

  const vib::TapeVibParams vp{p[L.w_mu], p[L.b_mu], p[L.w_sigma], p[L.b_sigma], p[L.w_c], p[L.b_c]};
  const vib::TapePosterior q = vib::encode_gaussian(t_prime, vp);
  const ad::Var z = (ablation.disable_vib || epsilon == nullptr) ? q.mu
                                                                  : vib::reparameterize(q, *epsilon);
  const ad::Var logits = vib::class_logits(z, vp);
  out.ce_sum = vib::cross_entropy_sum(logits, in.targets);
  out.kl_sum = ablation.disable_vib ? tape.constant(0.0) : vib::kl_sum(q);

  const Mat& lg = logits.value();
  out.probs = (lg.colwise() - lg.rowwise().maxCoeff()).array().exp().matrix();
  out.probs.array().colwise() /= out.probs.rowwise().sum().array();
  out.gate = gate.value();
  out.conf = conf.value();
  out.mu = q.mu.value();
  out.log_var = q.log_var.value();
  return out;
}

// ---- model file ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'T', 'F', 'U', 'S', 'E', 'M', 'D'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error("model file '" + path + "' is truncated reading " + what);
  return v;
}

std::string take_string(std::istream& in, std::size_t n, const std::string& path, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw std::runtime_error("model file '" + path + "' is truncated reading " + what);
  return s;
}

}  // namespace

void save_model(const Model& model, const nlohmann::json& run_config, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kModelFileVersion);
  const std::string cfg = run_config.dump();
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.tensors.size()));
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    const std::string& name = model.names[i];
    const Mat& t = model.tensors[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.size()));
  }
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("'" + path + "' is not a model file");
  const auto version = take<std::uint32_t>(in, path, "version");
  if (version != kModelFileVersion)
    throw std::runtime_error("model file '" + path + "' has version " + std::to_string(version) +
                             ", this build reads version " + std::to_string(kModelFileVersion));
  const auto cfg_len = take<std::uint64_t>(in, path, "config length");
  if (cfg_len > (1u << 24)) throw std::runtime_error("model file '" + path + "' has a corrupt header");
  LoadedModel lm;
  try {
    lm.run_config = nlohmann::json::parse(take_string(in, cfg_len, path, "config"));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("model file '" + path + "' has a corrupt config: " + e.what());
  }
  const ExperimentConfig cfg = config_from_json(lm.run_config);
  Model expected = init_model(cfg, 0);

  const auto count = take<std::uint32_t>(in, path, "tensor count");
  if (count != expected.tensors.size())
    throw std::runtime_error("model file '" + path + "' holds " + std::to_string(count) +
                             " tensors, the config implies " +
                             std::to_string(expected.tensors.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, path, "tensor name length");
    if (name_len > 4096) throw std::runtime_error("model file '" + path + "' has a corrupt name");
    const std::string name = take_string(in, name_len, path, "tensor name");
    const auto rows = take<std::uint32_t>(in, path, "rows");
    const auto cols = take<std::uint32_t>(in, path, "cols");
    Mat& slot = expected.tensors[i];
    if (name != expected.names[i] || rows != slot.rows() || cols != slot.cols())
      throw std::runtime_error("model file '" + path + "': tensor " + std::to_string(i) + " is '" +
                               name + "' (" + std::to_string(rows) + "x" + std::to_string(cols) +
                               "), expected '" + expected.names[i] + "' " + shape_str(slot));
    if (!in.read(reinterpret_cast<char*>(slot.data()),
                 static_cast<std::streamsize>(sizeof(double) * slot.size())))
      throw std::runtime_error("model file '" + path + "' is truncated in tensor '" + name + "'");
  }
  lm.model = std::move(expected);
  return lm;
}

}  // namespace otfuse::model
