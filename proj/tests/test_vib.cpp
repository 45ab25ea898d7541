#include "doctest.h"

#include "oracles.hpp"
#include "otfuse/gradcheck.hpp"
#include "otfuse/vib.hpp"

#include <cmath>
#include <cstring>
#include <random>

using namespace otfuse;
using namespace otfuse::vib;
using oracle::random_mat;

namespace {

VibParams zero_params(Eigen::Index d, Eigen::Index dz, Eigen::Index nc) {
  return {Mat::Zero(d, dz), Mat::Zero(1, dz), Mat::Zero(d, dz), Mat::Zero(1, dz),
          Mat::Zero(dz, nc), Mat::Zero(1, nc), 0.0};
}

VibParams random_params(std::mt19937_64& rng, Eigen::Index d, Eigen::Index dz, Eigen::Index nc) {
  return {random_mat(rng, d, dz), random_mat(rng, 1, dz), random_mat(rng, d, dz),
          random_mat(rng, 1, dz), random_mat(rng, dz, nc), random_mat(rng, 1, nc), 1e-3};
}

GaussianPosterior constant_posterior(Eigen::Index n, Eigen::Index dz, double mu, double var) {
  GaussianPosterior q;
  q.mu = Mat::Constant(n, dz, mu);
  q.log_var = Mat::Constant(n, dz, std::log(var));
  return q;
}

}  // namespace

TEST_CASE("encode_gaussian") {
  std::mt19937_64 rng(1);
  Mat t = random_mat(rng, 5, 4);
  SUBCASE("zero weights give the prior") {
    auto q = encode_gaussian(t, zero_params(4, 4, 3));
    CHECK(q.mu.cwiseAbs().maxCoeff() == 0.0);
    CHECK(q.log_var.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity mean map") {
    auto p = zero_params(4, 4, 3);
    p.w_mu = Mat::Identity(4, 4);
    CHECK((encode_gaussian(t, p).mu - t).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("affine map matches a naive loop") {
    auto p = random_params(rng, 4, 6, 3);
    auto q = encode_gaussian(t, p);
    Mat mu = oracle::naive_matmul(t, p.w_mu);
    Mat lv = oracle::naive_matmul(t, p.w_sigma);
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 6; ++j) {
        CHECK(q.mu(i, j) == doctest::Approx(mu(i, j) + p.b_mu(0, j)).epsilon(1e-13));
        CHECK(q.log_var(i, j) == doctest::Approx(lv(i, j) + p.b_sigma(0, j)).epsilon(1e-13));
      }
  }
  SUBCASE("log variance is clamped") {
    auto p = zero_params(4, 4, 3);
    p.b_sigma = Mat::Constant(1, 4, 50.0);
    CHECK(encode_gaussian(t, p).log_var.maxCoeff() == kLogVarMax);
    p.b_sigma = Mat::Constant(1, 4, -50.0);
    CHECK(encode_gaussian(t, p).log_var.minCoeff() == kLogVarMin);
  }
  SUBCASE("shape and beta validation") {
    auto p = zero_params(3, 4, 3);
    CHECK_THROWS_AS(encode_gaussian(t, p), ad::ShapeError);
    p = zero_params(4, 4, 3);
    p.beta = -1.0;
    CHECK_THROWS_AS(encode_gaussian(t, p), std::invalid_argument);
  }
}

TEST_CASE("reparameterize") {
  std::mt19937_64 rng(2);
  SUBCASE("collapsed variance keeps z near mu") {
    GaussianPosterior q{random_mat(rng, 6, 5), Mat::Constant(6, 5, kLogVarMin), {}, {}};
    reparameterize(q, 11);
    const double sigma = std::exp(0.5 * kLogVarMin);
    for (Eigen::Index i = 0; i < q.z.size(); ++i)
      CHECK(std::abs(q.z.data()[i] - q.mu.data()[i]) <=
            sigma * std::abs(q.epsilon.data()[i]) + 1e-15);
    CHECK(sigma < 0.007);
  }
  SUBCASE("zero noise returns the mean") {
    GaussianPosterior q{random_mat(rng, 3, 4), random_mat(rng, 3, 4), {}, {}};
    reparameterize_with(q, Mat::Zero(3, 4));
    CHECK((q.z - q.mu).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("stored noise reproduces z exactly") {
    GaussianPosterior q{random_mat(rng, 3, 4), random_mat(rng, 3, 4), {}, {}};
    reparameterize(q, 5);
    Mat expected = q.mu.array() + (0.5 * q.log_var.array()).exp() * q.epsilon.array();
    CHECK((q.z - expected).cwiseAbs().maxCoeff() == 0.0);
    GaussianPosterior again{q.mu, q.log_var, {}, {}};
    reparameterize(again, 5);
    CHECK((again.z - q.z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("Monte-Carlo moments") {
    GaussianPosterior q = constant_posterior(100000, 1, 1.0, 4.0);
    reparameterize(q, 2024);
    const double mean = q.z.mean();
    const double var = (q.z.array() - mean).square().sum() / (q.z.size() - 1);
    CHECK(std::abs(mean - 1.0) < 0.02);
    CHECK(std::abs(var - 4.0) < 0.1);
  }
}

TEST_CASE("kl_to_standard_normal examples") {
  CHECK(kl_to_standard_normal(constant_posterior(3, 4, 0.0, 1.0)) == 0.0);
  CHECK(kl_to_standard_normal(constant_posterior(1, 1, 1.0, 1.0)) == 0.5);
  CHECK(kl_to_standard_normal(constant_posterior(1, 1, 0.0, 4.0)) ==
        doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-14));
  CHECK(kl_to_standard_normal(constant_posterior(1, 1, 0.0, 4.0)) ==
        doctest::Approx(0.8069).epsilon(1e-4));
  // mean over tokens, sum over dims
  GaussianPosterior q = constant_posterior(2, 3, 0.0, 1.0);
  q.mu(0, 0) = 2.0;
  CHECK(kl_to_standard_normal(q) == 1.0);
}

TEST_CASE("KL is nonnegative and vanishes only at the prior") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    GaussianPosterior q{random_mat(rng, 3, 4, -2, 2), random_mat(rng, 3, 4, -3, 3), {}, {}};
    CHECK(kl_to_standard_normal(q) > 0.0);
    // perturbing a single coordinate away from the prior makes it positive
    GaussianPosterior p = constant_posterior(2, 2, 0.0, 1.0);
    const double delta = std::ldexp(1.0, -static_cast<int>(trial % 20));
    if (trial % 2) p.mu(1, 1) = delta;
    else p.log_var(1, 1) = delta;
    CHECK(kl_to_standard_normal(p) > 0.0);
  }
}

TEST_CASE("closed-form KL agrees with Monte-Carlo") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Mat mu = random_mat(rng, 1, 4, -1.5, 1.5);
    Mat lv = random_mat(rng, 1, 4, -2, 2);
    const double closed = kl_to_standard_normal({mu, lv, {}, {}});
    const double mc = oracle::kl_monte_carlo(mu, lv, 100000, 100 + trial);
    CHECK(std::abs(mc - closed) <= 0.02 * closed);
  }
}

TEST_CASE("per_dim_kl_profile") {
  GaussianPosterior prior = constant_posterior(5, 4, 0.0, 1.0);
  CHECK(per_dim_kl_profile(prior).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(5);
  auto p = zero_params(6, 4, 3);
  auto q = encode_gaussian(random_mat(rng, 7, 6), p);
  CHECK(per_dim_kl_profile(q).cwiseAbs().maxCoeff() == 0.0);

  GaussianPosterior r{random_mat(rng, 6, 4), random_mat(rng, 6, 4), {}, {}};
  r.mu.col(2).setZero();
  r.log_var.col(2).setZero();
  Mat prof = per_dim_kl_profile(r);
  CHECK(prof(0, 2) == 0.0);
  CHECK(prof.sum() == doctest::Approx(kl_to_standard_normal(r)).epsilon(1e-13));
}

TEST_CASE("classify") {
  std::mt19937_64 rng(6);
  SUBCASE("zero weights are uniform") {
    Mat probs = classify(random_mat(rng, 4, 3), zero_params(3, 3, 7));
    CHECK((probs.array() - 1.0 / 7).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("saturation") {
    auto p = zero_params(1, 1, 2);
    p.w_c << 10.0, -10.0;
    Mat probs = classify(Mat::Ones(1, 1), p);
    CHECK(std::abs(probs(0, 0) - 1.0) < 1e-8);
    CHECK(probs(0, 1) < 1e-8);
  }
  SUBCASE("log-probabilities match logits minus logsumexp") {
    auto p = random_params(rng, 5, 5, 7);
    Mat z = random_mat(rng, 4, 5, -3, 3);
    Mat probs = classify(z, p);
    for (Eigen::Index i = 0; i < 4; ++i) {
      std::vector<double> logit(7);
      double mx = -1e300;
      for (Eigen::Index c = 0; c < 7; ++c) {
        logit[c] = p.b_c(0, c);
        for (Eigen::Index k = 0; k < 5; ++k) logit[c] += z(i, k) * p.w_c(k, c);
        mx = std::max(mx, logit[c]);
      }
      double s = 0.0;
      for (double l : logit) s += std::exp(l - mx);
      const double lse = mx + std::log(s);
      for (Eigen::Index c = 0; c < 7; ++c)
        CHECK(std::log(probs(i, c)) == doctest::Approx(logit[c] - lse).epsilon(1e-12));
    }
  }
  SUBCASE("rows sum to one") {
    for (int trial = 0; trial < 1000; ++trial) {
      auto p = random_params(rng, 4, 4, 7);
      p.w_c *= 10.0;
      Mat probs = classify(random_mat(rng, 3, 4, -5, 5), p);
      for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(probs.row(i).sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("task_loss") {
  Mat one_hot = Mat::Zero(3, 7);
  one_hot(0, 1) = one_hot(1, 4) = one_hot(2, 0) = 1.0;
  CHECK(task_loss(one_hot, {1, 4, 0}, {1, 1, 1}) <= 1e-10);
  CHECK(task_loss(Mat::Constant(3, 7, 1.0 / 7), {1, 4, 0}, {1, 1, 1}) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-14));
  Mat two(2, 2);
  two << 0.9, 0.1, 0.2, 0.8;
  const double expected = -0.5 * (std::log(0.9) + std::log(0.8));
  CHECK(task_loss(two, {0, 1}, {1, 1}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.1643).epsilon(1e-3));
  // masked rows contribute nothing and do not count
  CHECK(task_loss(two, {0, 0}, {1, 0}) == doctest::Approx(-std::log(0.9)).epsilon(1e-14));
  // floor keeps the loss finite
  CHECK(task_loss(Mat::Zero(1, 2), {0}, {1}) == doctest::Approx(-std::log(kProbFloor)));
  CHECK_THROWS_AS(task_loss(two, {0, 1}, {0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(task_loss(two, {0, 2}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(task_loss(two, {0}, {1}), std::invalid_argument);
}

TEST_CASE("total_loss") {
  CHECK(total_loss(1.25, 3.0, 0.0) == 1.25);
  CHECK(total_loss(0.5, 2.0, 0.1) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(total_loss(0.5, 2.0, -0.1), std::invalid_argument);
}

TEST_CASE("tape route agrees with the value route") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_params(rng, 5, 5, 7);
    Mat t = random_mat(rng, 4, 5);
    Mat eps = random_mat(rng, 4, 5, -2, 2);
    std::vector<int> targets = {0, 3, 6, 2};
    auto q = encode_gaussian(t, p);
    reparameterize_with(q, eps);
    const double task = task_loss(classify(q.z, p), targets, {1, 1, 1, 1});
    const double total = total_loss(task, kl_to_standard_normal(q), p.beta);

    ad::Tape tape;
    TapeVibParams tp{tape.constant(p.w_mu),    tape.constant(p.b_mu), tape.constant(p.w_sigma),
                     tape.constant(p.b_sigma), tape.constant(p.w_c),  tape.constant(p.b_c)};
    auto tq = encode_gaussian(tape.constant(t), tp);
    ad::Var z = reparameterize(tq, eps);
    ad::Var loss = ad::scale(
        ad::add(cross_entropy_sum(class_logits(z, tp), targets), ad::scale(kl_sum(tq), p.beta)),
        0.25);
    CHECK(loss.scalar() == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("gradient of the loss through the sampler") {
  std::mt19937_64 rng(8);
  const Mat eps = random_mat(rng, 4, 3, -2, 2);
  const std::vector<int> targets = {0, 2, -1, 1};
  std::vector<Mat> params = {random_mat(rng, 4, 5),     random_mat(rng, 5, 3),
                             random_mat(rng, 1, 3),     random_mat(rng, 5, 3, -0.5, 0.5),
                             random_mat(rng, 1, 3),     random_mat(rng, 3, 4),
                             random_mat(rng, 1, 4)};
  ad::LossBuilder f = [&](ad::Tape&, const std::vector<ad::Var>& v) {
    TapeVibParams tp{v[1], v[2], v[3], v[4], v[5], v[6]};
    auto q = encode_gaussian(v[0], tp);
    ad::Var z = reparameterize(q, eps);
    return ad::scale(ad::add(cross_entropy_sum(class_logits(z, tp), targets),
                             ad::scale(kl_sum(q), 0.3)),
                     1.0 / 3.0);
  };
  auto report = ad::finite_diff_check(
      f, params, 1e-5, {"t_prime", "w_mu", "b_mu", "w_sigma", "b_sigma", "w_c", "b_c"});
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.groups.size() == 7);
}

TEST_CASE("posterior-mean evaluation is bit-identical") {
  std::mt19937_64 rng(9);
  auto p = random_params(rng, 5, 5, 7);
  Mat t = random_mat(rng, 6, 5);
  auto run = [&] {
    auto q = encode_gaussian(t, p);
    reparameterize_with(q, Mat::Zero(6, 5));
    return classify(q.z, p);
  };
  Mat a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}
