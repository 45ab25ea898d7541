#pragma once

// Variational information bottleneck head. Each gated token feature T'_i is
// mapped to a diagonal Gaussian q(z_i | T'_i) = N(mu_i, diag(exp(log_var_i))),
// a latent is drawn with the reparameterisation z = mu + exp(log_var/2) * eps,
// and a softmax classifier reads the latent. The loss is the masked
// cross-entropy plus beta times the mean KL to N(0, I).

#include "otfuse/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace otfuse::vib {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kProbFloor = 1e-12;

struct VibParams {
  Mat w_mu;     // d x d_z
  Mat b_mu;     // 1 x d_z
  Mat w_sigma;  // d x d_z
  Mat b_sigma;  // 1 x d_z
  Mat w_c;      // d_z x |C|
  Mat b_c;      // 1 x |C|
  double beta = 1e-3;

  Eigen::Index latent_dim() const { return w_mu.cols(); }
  Eigen::Index num_classes() const { return w_c.cols(); }
  void validate(Eigen::Index model_dim) const;
};

struct GaussianPosterior {
  Mat mu;       // N x d_z
  Mat log_var;  // N x d_z, clamped
  Mat z;        // N x d_z, empty until sampled
  Mat epsilon;  // N x d_z, the noise used for z
};

// ---- plain-value route -----------------------------------------------------

GaussianPosterior encode_gaussian(const Mat& t_prime, const VibParams& params);

// Draws epsilon ~ N(0, I) from a generator seeded with `seed` and fills z.
void reparameterize(GaussianPosterior& posterior, std::uint64_t seed);
// Uses the given noise instead of drawing one (zero noise gives z = mu).
void reparameterize_with(GaussianPosterior& posterior, const Mat& epsilon);

// Per-token KL to N(0, I), N x 1.
Mat kl_per_token(const GaussianPosterior& posterior);
// Mean of kl_per_token over the rows.
double kl_to_standard_normal(const GaussianPosterior& posterior);
// Mean over rows of the per-dimension KL terms, 1 x d_z.
Mat per_dim_kl_profile(const GaussianPosterior& posterior);

// Row softmax of z W_c + b_c.
Mat classify(const Mat& z, const VibParams& params);

// Masked mean cross-entropy. targets holds class indices; mask[i] != 0 marks
// supervised rows. Throws when no row is supervised.
double task_loss(const Mat& probs, const std::vector<int>& targets,
                 const std::vector<int>& mask);

double total_loss(double task, double kl, double beta);

// ---- tape route ------------------------------------------------------------

struct TapePosterior {
  ad::Var mu;
  ad::Var log_var;
};

struct TapeVibParams {
  ad::Var w_mu, b_mu, w_sigma, b_sigma, w_c, b_c;
};

TapePosterior encode_gaussian(const ad::Var& t_prime, const TapeVibParams& params);
ad::Var reparameterize(const TapePosterior& posterior, const Mat& epsilon);
// Sum over rows of the per-token KL (caller divides by the supervised count).
ad::Var kl_sum(const TapePosterior& posterior);
ad::Var class_logits(const ad::Var& z, const TapeVibParams& params);
// Sum over rows of -log softmax(logits)[target]; rows with a negative target
// are skipped. The probability is floored at kProbFloor before the log.
ad::Var cross_entropy_sum(const ad::Var& logits, const std::vector<int>& targets);

}  // namespace otfuse::vib
