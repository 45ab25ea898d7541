#pragma once

// Reference computations shared by the unit tests and the acceptance binary.
// They deliberately avoid the library's code paths.

#include "otfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using otfuse::Mat;

inline Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

// Monte-Carlo estimate of KL(N(mu, diag(exp(log_var))) || N(0, I)) as the
// sample mean of log q(z) - log p(z) with z ~ q. mu and log_var are 1 x D.
inline double kl_monte_carlo(const Mat& mu, const Mat& log_var, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (Eigen::Index d = 0; d < mu.cols(); ++d) {
      const double sigma = std::exp(0.5 * log_var(0, d));
      const double e = normal(rng);
      const double z = mu(0, d) + sigma * e;
      // log q - log p; the 2*pi constants cancel
      log_ratio += -0.5 * log_var(0, d) - 0.5 * e * e + 0.5 * z * z;
    }
    acc += log_ratio;
  }
  return acc / samples;
}

// Optimal transport cost between uniform marginals on a square cost matrix.
// The optimum sits at a vertex of the Birkhoff polytope, i.e. a permutation,
// so enumerating all n! assignments is exact.
inline double brute_force_ot_cost(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

}  // namespace oracle
