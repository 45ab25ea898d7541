#include "otfuse/synthdoc.hpp"

#include "otfuse/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace otfuse::synth {

using nlohmann::json;

const std::vector<std::string>& tag_names() {
  static const std::vector<std::string> names = {"O", "B-Q", "I-Q", "B-A", "I-A", "B-H", "I-H"};
  return names;
}

int num_tags() { return static_cast<int>(tag_names().size()); }

int tag_index(const std::string& name) {
  const auto& names = tag_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("unknown tag '" + name + "'");
  return static_cast<int>(it - names.begin());
}

bool is_begin(int tag) { return tag > 0 && tag % 2 == 1; }
bool is_inside(int tag) { return tag > 0 && tag % 2 == 0; }
int entity_of(int tag) { return tag <= 0 ? -1 : (tag - 1) / 2; }

bool bio_valid(const std::vector<int>& tags) {
  int prev = 0;
  for (int t : tags) {
    if (is_inside(t) && entity_of(prev) != entity_of(t)) return false;
    prev = t;
  }
  return true;
}

bool SynthDocument::operator==(const SynthDocument& o) const {
  return doc_id == o.doc_id && seed == o.seed && grid_size == o.grid_size &&
         tokens == o.tokens && patches.rows() == o.patches.rows() &&
         patches.cols() == o.patches.cols() && patches == o.patches;
}

// ---- generator -------------------------------------------------------------

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (n_docs < 0) fail("n_docs must be >= 0");
  if (grid_size < 2) fail("grid_size must be >= 2, got " + std::to_string(grid_size));
  if (!(visual_cue_strength >= 0.0 && visual_cue_strength <= 1.0))
    fail("visual_cue_strength out of range [0, 1]: " + std::to_string(visual_cue_strength));
  if (min_tokens < 0 || max_tokens < min_tokens)
    fail("tokens_per_doc range is empty: [" + std::to_string(min_tokens) + ", " +
         std::to_string(max_tokens) + "]");
  if (max_tokens > grid_size * grid_size)
    fail("max_tokens " + std::to_string(max_tokens) + " exceeds the " +
         std::to_string(grid_size * grid_size) + " grid cells");
  if (vocab_size < num_tags() + 1)
    fail("vocab_size " + std::to_string(vocab_size) + " is below the " +
         std::to_string(num_tags() + 1) + " ids needed for tag markers plus an ambiguous id");
  if (noise_dims < 0 || patch_dim - noise_dims < num_tags())
    fail("patch_dim - noise_dims must leave at least " + std::to_string(num_tags()) +
         " signal dims");
}

int GeneratorConfig::ambiguous_pool() const { return std::max(1, vocab_size / 8); }

int GeneratorConfig::ids_per_tag() const { return (vocab_size - ambiguous_pool()) / num_tags(); }

bool is_ambiguous(const GeneratorConfig& config, int token_id) {
  return token_id >= 0 && token_id < config.ambiguous_pool();
}

namespace {

// Segment sequence over {O, Q, A, H}; entities span two tokens (B, I).
std::vector<int> draw_tags(std::mt19937_64& rng, int n) {
  std::vector<int> tags;
  std::uniform_int_distribution<int> segment(0, 3);
  while (static_cast<int>(tags.size()) < n) {
    const int s = segment(rng);
    const bool fits = static_cast<int>(tags.size()) + 2 <= n;
    if (s == 0) {
      tags.push_back(0);
    } else if (!fits) {
      tags.push_back(2 * s - 1);  // single-token entity in the last slot
    } else {
      tags.push_back(2 * s - 1);
      tags.push_back(2 * s);
    }
  }
  return tags;
}

}  // namespace

SynthDocument generate_one(const GeneratorConfig& config, std::int64_t doc_id) {
  auto rng = make_stream(config.seed, static_cast<std::uint64_t>(doc_id));
  SynthDocument doc;
  doc.doc_id = doc_id;
  doc.seed = config.seed;
  doc.grid_size = config.grid_size;
  const int G = config.grid_size;
  const int cells = G * G;

  const int n = std::uniform_int_distribution<int>(config.min_tokens, config.max_tokens)(rng);
  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(n));
  std::sort(order.begin(), order.end());  // reading order: row-major

  const std::vector<int> tags = draw_tags(rng, n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> lo_edge(0.05, 0.4), hi_edge(0.6, 0.95);
  std::uniform_int_distribution<int> pool_id(0, config.ambiguous_pool() - 1);
  std::uniform_int_distribution<int> tag_id(0, config.ids_per_tag() - 1);

  doc.patches = Mat::Zero(cells, config.patch_dim);
  for (int k = 0; k < n; ++k) {
    const int cell = order[static_cast<std::size_t>(k)];
    const int r = cell / G, c = cell % G;
    Token t;
    t.label = tags[static_cast<std::size_t>(k)];
    t.bbox = {(c + lo_edge(rng)) / G, (r + lo_edge(rng)) / G, (c + hi_edge(rng)) / G,
              (r + hi_edge(rng)) / G};
    const bool ambiguous = unit(rng) < config.visual_cue_strength;
    t.id = ambiguous ? pool_id(rng)
                     : config.ambiguous_pool() + t.label * config.ids_per_tag() + tag_id(rng);
    doc.tokens.push_back(t);
    doc.patches(cell, t.label) = 1.0;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const int first_noise = config.patch_dim - config.noise_dims;
  for (int cell = 0; cell < cells; ++cell)
    for (int j = first_noise; j < config.patch_dim; ++j) doc.patches(cell, j) = normal(rng);
  return doc;
}

std::vector<SynthDocument> generate(const GeneratorConfig& config) {
  config.validate();
  std::vector<SynthDocument> docs;
  docs.reserve(static_cast<std::size_t>(config.n_docs));
  for (int i = 0; i < config.n_docs; ++i) docs.push_back(generate_one(config, i));
  return docs;
}

// ---- JSONL -----------------------------------------------------------------

std::string to_json_line(const SynthDocument& doc) {
  json j;
  j["doc_id"] = doc.doc_id;
  j["seed"] = doc.seed;
  j["grid_size"] = doc.grid_size;
  j["patch_dim"] = doc.patches.cols();
  json tokens = json::array();
  for (const auto& t : doc.tokens)
    tokens.push_back({{"id", t.id},
                      {"bbox", {t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]}},
                      {"label", tag_names().at(static_cast<std::size_t>(t.label))}});
  j["tokens"] = std::move(tokens);
  j["patches"] = std::vector<double>(doc.patches.data(), doc.patches.data() + doc.patches.size());
  // nlohmann prints the shortest decimal that parses back to the same double
  return j.dump();
}

namespace {

[[noreturn]] void bad_line(std::size_t line_no, const std::string& field, const std::string& why) {
  throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + field + "': " + why);
}

template <typename T>
T get_field(const json& j, const char* key, std::size_t line_no, const std::string& prefix = "") {
  const std::string name = prefix + key;
  if (!j.contains(key)) bad_line(line_no, name, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad_line(line_no, name, e.what());
  }
}

}  // namespace

SynthDocument from_json_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    bad_line(line_no, "<document>", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) bad_line(line_no, "<document>", "expected an object");
  SynthDocument doc;
  doc.doc_id = get_field<std::int64_t>(j, "doc_id", line_no);
  doc.seed = get_field<std::uint64_t>(j, "seed", line_no);
  doc.grid_size = get_field<int>(j, "grid_size", line_no);
  const int patch_dim = get_field<int>(j, "patch_dim", line_no);
  if (doc.grid_size < 2) bad_line(line_no, "grid_size", "must be >= 2");
  if (patch_dim < 1) bad_line(line_no, "patch_dim", "must be >= 1");

  if (!j.contains("tokens") || !j["tokens"].is_array()) bad_line(line_no, "tokens", "missing array");
  std::vector<int> tags;
  for (std::size_t k = 0; k < j["tokens"].size(); ++k) {
    const json& tj = j["tokens"][k];
    const std::string prefix = "tokens[" + std::to_string(k) + "].";
    Token t;
    t.id = get_field<int>(tj, "id", line_no, prefix);
    const auto box = get_field<std::vector<double>>(tj, "bbox", line_no, prefix);
    if (box.size() != 4) bad_line(line_no, prefix + "bbox", "expected 4 numbers");
    std::copy(box.begin(), box.end(), t.bbox.begin());
    for (double v : box)
      if (!(v >= 0.0 && v <= 1.0)) bad_line(line_no, prefix + "bbox", "coordinate outside [0, 1]");
    if (!(t.bbox[0] < t.bbox[2])) bad_line(line_no, prefix + "bbox", "x0 must be < x1");
    if (!(t.bbox[1] < t.bbox[3])) bad_line(line_no, prefix + "bbox", "y0 must be < y1");
    const auto label = get_field<std::string>(tj, "label", line_no, prefix);
    try {
      t.label = tag_index(label);
    } catch (const std::invalid_argument& e) {
      bad_line(line_no, prefix + "label", e.what());
    }
    tags.push_back(t.label);
    doc.tokens.push_back(t);
  }
  if (!bio_valid(tags)) bad_line(line_no, "tokens", "I- tag does not continue a matching entity");

  const auto flat = get_field<std::vector<double>>(j, "patches", line_no);
  const std::size_t expected =
      static_cast<std::size_t>(doc.grid_size) * doc.grid_size * static_cast<std::size_t>(patch_dim);
  if (flat.size() != expected)
    bad_line(line_no, "patches",
             "expected " + std::to_string(expected) + " values, got " + std::to_string(flat.size()));
  doc.patches = Eigen::Map<const Mat>(flat.data(), doc.grid_size * doc.grid_size, patch_dim);
  return doc;
}

void save_jsonl(const std::vector<SynthDocument>& docs, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const auto& d : docs) out << to_json_line(d) << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<SynthDocument> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::vector<SynthDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    docs.push_back(from_json_line(line, line_no));
  }
  return docs;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const Mat& m, std::uint64_t h) {
  return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---- featurisation ---------------------------------------------------------

Mat sinusoidal_position(int index) {
  Mat p(1, kPosDim);
  for (int k = 0; k < kPosDim / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / kPosDim);
    p(0, 2 * k) = std::sin(index * freq);
    p(0, 2 * k + 1) = std::cos(index * freq);
  }
  return p;
}

DocInputs doc_inputs(const SynthDocument& doc, int vocab_size, int max_len) {
  if (max_len < 0) throw std::invalid_argument("max_len must be >= 0");
  const int n = std::min(static_cast<int>(doc.tokens.size()), max_len);
  const int G = doc.grid_size;
  const int M = G * G;
  if (doc.patches.rows() != M)
    throw std::invalid_argument("document " + std::to_string(doc.doc_id) + " has " +
                                std::to_string(doc.patches.rows()) + " patches, expected " +
                                std::to_string(M));
  DocInputs in;
  in.one_hot = Mat::Zero(n, vocab_size);
  in.token_side = Mat::Zero(n, kTokenSideDim);
  in.token_pos = Mat::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    const Token& t = doc.tokens[static_cast<std::size_t>(i)];
    if (t.id < 0 || t.id >= vocab_size)
      throw std::invalid_argument("token id " + std::to_string(t.id) + " outside vocabulary of " +
                                  std::to_string(vocab_size));
    in.one_hot(i, t.id) = 1.0;
    for (int k = 0; k < 4; ++k) in.token_side(i, k) = t.bbox[static_cast<std::size_t>(k)];
    in.token_side.block(i, 4, 1, kPosDim) = sinusoidal_position(i);
    in.token_pos(i, 0) = 0.5 * (t.bbox[0] + t.bbox[2]);
    in.token_pos(i, 1) = 0.5 * (t.bbox[1] + t.bbox[3]);
    in.targets.push_back(t.label);
  }
  const Eigen::Index dv = doc.patches.cols();
  in.patch_raw = Mat::Zero(M, dv + 2);
  in.patch_pos = Mat::Zero(M, 2);
  in.patch_raw.leftCols(dv) = doc.patches;
  for (int cell = 0; cell < M; ++cell) {
    in.patch_pos(cell, 0) = (cell % G + 0.5) / G;
    in.patch_pos(cell, 1) = (cell / G + 0.5) / G;
  }
  in.patch_raw.rightCols(2) = in.patch_pos;
  return in;
}

EncoderParams init_encoder(int vocab_size, int patch_dim, int model_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  EncoderParams p;
  p.embedding = gaussian(vocab_size, kEmbedDim, 1.0);
  const int tok_in = kEmbedDim + kTokenSideDim;
  p.w_tok = gaussian(tok_in, model_dim, 1.0 / std::sqrt(static_cast<double>(tok_in)));
  p.w_patch = gaussian(patch_dim + 2, model_dim, 1.0 / std::sqrt(patch_dim + 2.0));
  return p;
}

TapeFeatures encode(ad::Tape& tape, const DocInputs& inputs, const TapeEncoder& params) {
  const ad::Var emb = ad::matmul(tape.constant(inputs.one_hot), params.embedding);
  const ad::Var tok = ad::concat_cols({emb, tape.constant(inputs.token_side)});
  return {ad::matmul(tok, params.w_tok), ad::matmul(tape.constant(inputs.patch_raw), params.w_patch)};
}

EncodedDocument encode(const SynthDocument& doc, const EncoderParams& params, int max_len,
                       int model_dim, int heads) {
  if (heads < 1 || model_dim % heads != 0)
    throw std::invalid_argument("model width " + std::to_string(model_dim) +
                                " is not divisible by head count " + std::to_string(heads));
  if (params.model_dim() != model_dim || params.w_patch.cols() != model_dim)
    throw ad::ShapeError("encoder projections do not produce width " + std::to_string(model_dim));
  const DocInputs in = doc_inputs(doc, static_cast<int>(params.embedding.rows()), max_len);
  if (params.w_patch.rows() != in.patch_raw.cols())
    throw ad::ShapeError("patch projection expects " + std::to_string(params.w_patch.rows()) +
                         " inputs, document has " + std::to_string(in.patch_raw.cols()));
  ad::Tape tape;
  const TapeFeatures f = encode(tape, in, {tape.constant(params.embedding),
                                           tape.constant(params.w_tok),
                                           tape.constant(params.w_patch)});
  EncodedDocument out;
  const auto n = static_cast<Eigen::Index>(in.targets.size());
  out.T = Mat::Zero(max_len, model_dim);
  if (n > 0) out.T.topRows(n) = f.T.value();
  out.V = f.V.value();
  out.mask.assign(static_cast<std::size_t>(max_len), 0);
  out.targets.assign(static_cast<std::size_t>(max_len), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.mask[static_cast<std::size_t>(i)] = 1;
    out.targets[static_cast<std::size_t>(i)] = in.targets[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace otfuse::synth
