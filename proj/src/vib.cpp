#include "otfuse/vib.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace otfuse::vib {

namespace {

void expect_shape(const Mat& m, Eigen::Index r, Eigen::Index c, const char* what) {
  if (m.rows() != r || m.cols() != c)
    throw ad::ShapeError(std::string("vib: ") + what + " has shape " + shape_str(m) +
                         ", expected (" + std::to_string(r) + "x" + std::to_string(c) + ")");
}

Mat clamp_log_var(const Mat& raw) { return raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax); }

}  // namespace

void VibParams::validate(Eigen::Index model_dim) const {
  const Eigen::Index dz = w_mu.cols();
  const Eigen::Index nc = w_c.cols();
  expect_shape(w_mu, model_dim, dz, "w_mu");
  expect_shape(b_mu, 1, dz, "b_mu");
  expect_shape(w_sigma, model_dim, dz, "w_sigma");
  expect_shape(b_sigma, 1, dz, "b_sigma");
  expect_shape(w_c, dz, nc, "w_c");
  expect_shape(b_c, 1, nc, "b_c");
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("vib: beta must be finite and >= 0, got " + std::to_string(beta));
}

GaussianPosterior encode_gaussian(const Mat& t_prime, const VibParams& params) {
  params.validate(t_prime.cols());
  GaussianPosterior q;
  q.mu = (t_prime * params.w_mu).rowwise() + params.b_mu.row(0);
  q.log_var = clamp_log_var((t_prime * params.w_sigma).rowwise() + params.b_sigma.row(0));
  return q;
}

void reparameterize(GaussianPosterior& posterior, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat eps(posterior.mu.rows(), posterior.mu.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
  reparameterize_with(posterior, eps);
}

void reparameterize_with(GaussianPosterior& posterior, const Mat& epsilon) {
  expect_shape(epsilon, posterior.mu.rows(), posterior.mu.cols(), "epsilon");
  expect_shape(posterior.log_var, posterior.mu.rows(), posterior.mu.cols(), "log_var");
  posterior.epsilon = epsilon;
  posterior.z = posterior.mu.array() + (0.5 * posterior.log_var.array()).exp() * epsilon.array();
}

namespace {

Mat kl_terms(const GaussianPosterior& q) {
  expect_shape(q.log_var, q.mu.rows(), q.mu.cols(), "log_var");
  if (!q.mu.allFinite() || !q.log_var.allFinite())
    throw std::invalid_argument("vib: posterior has non-finite entries");
  const auto lv = q.log_var.array();
  return 0.5 * (q.mu.array().square() + lv.exp() - lv - 1.0);
}

}  // namespace

Mat kl_per_token(const GaussianPosterior& posterior) {
  return kl_terms(posterior).rowwise().sum();
}

double kl_to_standard_normal(const GaussianPosterior& posterior) {
  if (posterior.mu.rows() == 0) return 0.0;
  return kl_per_token(posterior).mean();
}

Mat per_dim_kl_profile(const GaussianPosterior& posterior) {
  if (posterior.mu.rows() == 0) return Mat::Zero(1, posterior.mu.cols());
  return kl_terms(posterior).colwise().mean();
}

Mat classify(const Mat& z, const VibParams& params) {
  expect_shape(params.w_c, z.cols(), params.w_c.cols(), "w_c");
  Mat logits = (z * params.w_c).rowwise() + params.b_c.row(0);
  const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  Mat p = (logits.colwise() - mx).array().exp().matrix();
  const Eigen::VectorXd s = p.rowwise().sum();
  return (p.array().colwise() / s.array()).matrix();
}

double task_loss(const Mat& probs, const std::vector<int>& targets,
                 const std::vector<int>& mask) {
  const auto n = static_cast<std::size_t>(probs.rows());
  if (targets.size() != n || mask.size() != n)
    throw std::invalid_argument("task_loss: " + std::to_string(n) + " rows but " +
                                std::to_string(targets.size()) + " targets and " +
                                std::to_string(mask.size()) + " mask entries");
  double total = 0.0;
  std::size_t supervised = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const int c = targets[i];
    if (c < 0 || c >= probs.cols())
      throw std::invalid_argument("task_loss: target " + std::to_string(c) + " at row " +
                                  std::to_string(i) + " is not a class index");
    total -= std::log(std::max(probs(static_cast<Eigen::Index>(i), c), kProbFloor));
    ++supervised;
  }
  if (supervised == 0) throw std::invalid_argument("task_loss: no supervised tokens");
  return total / static_cast<double>(supervised);
}

double total_loss(double task, double kl, double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("total_loss: beta must be >= 0");
  return task + beta * kl;
}

// ---- tape route ------------------------------------------------------------

TapePosterior encode_gaussian(const ad::Var& t_prime, const TapeVibParams& params) {
  TapePosterior q;
  q.mu = ad::add(ad::matmul(t_prime, params.w_mu), params.b_mu);
  q.log_var = ad::clamp(ad::add(ad::matmul(t_prime, params.w_sigma), params.b_sigma), kLogVarMin,
                        kLogVarMax);
  return q;
}

ad::Var reparameterize(const TapePosterior& posterior, const Mat& epsilon) {
  expect_shape(epsilon, posterior.mu.rows(), posterior.mu.cols(), "epsilon");
  ad::Tape& tape = *posterior.mu.tape();
  const ad::Var sigma = ad::exp(ad::scale(posterior.log_var, 0.5));
  return ad::add(posterior.mu, ad::mul(sigma, tape.constant(epsilon)));
}

ad::Var kl_sum(const TapePosterior& posterior) {
  const ad::Var& lv = posterior.log_var;
  const ad::Var terms = ad::sub(ad::add(ad::mul(posterior.mu, posterior.mu), ad::exp(lv)), lv);
  const double count = static_cast<double>(lv.rows() * lv.cols());
  // sum(mu^2 + e^lv - lv - 1) / 2
  return ad::scale(ad::add(ad::sum(terms), lv.tape()->constant(-count)), 0.5);
}

ad::Var class_logits(const ad::Var& z, const TapeVibParams& params) {
  return ad::add(ad::matmul(z, params.w_c), params.b_c);
}

ad::Var cross_entropy_sum(const ad::Var& logits, const std::vector<int>& targets) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()))
    throw std::invalid_argument("cross_entropy_sum: target count does not match logits rows");
  Mat pick = Mat::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int c = targets[i];
    if (c < 0) continue;
    if (c >= logits.cols())
      throw std::invalid_argument("cross_entropy_sum: target " + std::to_string(c) +
                                  " out of range");
    pick(static_cast<Eigen::Index>(i), c) = 1.0;
  }
  ad::Tape& tape = *logits.tape();
  const ad::Var log_p = ad::log(ad::clamp(ad::softmax_rows(logits), kProbFloor,
                                          std::numeric_limits<double>::infinity()));
  return ad::scale(ad::sum(ad::mul(log_p, tape.constant(pick))), -1.0);
}

}  // namespace otfuse::vib
