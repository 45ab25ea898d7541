#pragma once

// Synthetic form-like documents. Tokens sit in distinct cells of a G x G
// grid; each occupied cell's patch carries a label pattern in its signal
// dimensions, while the remaining noise dimensions are i.i.d. N(0, 1). A
// fraction rho of tokens draw their id from a shared ambiguous pool, so their
// label can only be read from the co-located patch.

#include "otfuse/autodiff.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace otfuse::synth {

// Tag order is fixed: O, B-Q, I-Q, B-A, I-A, B-H, I-H.
const std::vector<std::string>& tag_names();
int num_tags();
int tag_index(const std::string& name);  // throws on unknown names
bool is_begin(int tag);
bool is_inside(int tag);
// Entity class of a B-/I- tag (0 = Q, 1 = A, 2 = H); -1 for O.
int entity_of(int tag);
// True when every I-X follows B-X or I-X.
bool bio_valid(const std::vector<int>& tags);

struct Token {
  int id = 0;
  std::array<double, 4> bbox{};  // x0, y0, x1, y1 in [0, 1]
  int label = 0;                 // index into tag_names()

  bool operator==(const Token& o) const {
    return id == o.id && bbox == o.bbox && label == o.label;
  }
};

struct SynthDocument {
  std::int64_t doc_id = 0;
  std::uint64_t seed = 0;
  int grid_size = 0;
  std::vector<Token> tokens;
  Mat patches;  // G^2 x d_v, row-major over the grid

  bool operator==(const SynthDocument& o) const;
};

struct GeneratorConfig {
  int n_docs = 640;
  int min_tokens = 6;
  int max_tokens = 12;
  int grid_size = 4;
  int vocab_size = 64;
  double visual_cue_strength = 0.5;  // rho
  int patch_dim = 32;
  int noise_dims = 16;
  std::uint64_t seed = 20240917;

  void validate() const;
  // Ids [0, pool) are ambiguous; each tag owns a block of ids after the pool.
  int ambiguous_pool() const;
  int ids_per_tag() const;
};

std::vector<SynthDocument> generate(const GeneratorConfig& config);
SynthDocument generate_one(const GeneratorConfig& config, std::int64_t doc_id);

// True when a token's id comes from the ambiguous pool.
bool is_ambiguous(const GeneratorConfig& config, int token_id);

void save_jsonl(const std::vector<SynthDocument>& docs, const std::string& path);
std::vector<SynthDocument> load_jsonl(const std::string& path);
std::string to_json_line(const SynthDocument& doc);
// line_no is used in error messages only.
SynthDocument from_json_line(const std::string& line, std::size_t line_no = 1);

// FNV-1a 64 over a byte range, and helpers for files and matrices.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const Mat& m, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_checksum(const std::string& path);
std::string hex64(std::uint64_t v);

// ---- featurisation ---------------------------------------------------------

inline constexpr int kEmbedDim = 16;
inline constexpr int kPosDim = 8;
inline constexpr int kTokenSideDim = 4 + kPosDim;  // bbox + sinusoidal position

// Fixed (parameter-free) inputs of one document, restricted to the first L
// tokens. Learned parameters turn these into T and V.
struct DocInputs {
  Mat one_hot;      // n x vocab
  Mat token_side;   // n x (4 + kPosDim)
  Mat patch_raw;    // M x (d_v + 2): patch vector and grid centre
  Mat token_pos;    // n x 2, box centres
  Mat patch_pos;    // M x 2, cell centres
  std::vector<int> targets;  // n tag indices
};

DocInputs doc_inputs(const SynthDocument& doc, int vocab_size, int max_len);
// Sinusoidal encoding of a sequence index, 1 x kPosDim.
Mat sinusoidal_position(int index);

struct EncoderParams {
  Mat embedding;  // vocab x kEmbedDim
  Mat w_tok;      // (kEmbedDim + kTokenSideDim) x d
  Mat w_patch;    // (d_v + 2) x d

  Eigen::Index model_dim() const { return w_tok.cols(); }
};

EncoderParams init_encoder(int vocab_size, int patch_dim, int model_dim, std::uint64_t seed);

struct EncodedDocument {
  Mat T;                     // L x d, zero rows past the real tokens
  Mat V;                     // M x d
  std::vector<int> mask;     // L entries, 1 for real tokens
  std::vector<int> targets;  // L entries, -1 for padding
};

// `heads` is only validated: d must be divisible by it.
EncodedDocument encode(const SynthDocument& doc, const EncoderParams& params, int max_len,
                       int model_dim, int heads);

struct TapeEncoder {
  ad::Var embedding, w_tok, w_patch;
};
struct TapeFeatures {
  ad::Var T;  // n x d
  ad::Var V;  // M x d
};
TapeFeatures encode(ad::Tape& tape, const DocInputs& inputs, const TapeEncoder& params);

}  // namespace otfuse::synth
