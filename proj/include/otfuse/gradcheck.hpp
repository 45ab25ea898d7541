#pragma once

// Central-difference verification of tape gradients.

#include "otfuse/autodiff.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace otfuse::ad {

// Builds a scalar loss on `tape` from leaves holding the parameter values.
// Must be deterministic: it is re-evaluated twice per parameter entry.
using LossBuilder = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
  Eigen::Index worst_entry = -1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_group = 0;
  Eigen::Index worst_entry = -1;
  std::vector<GroupError> groups;
};

class GradCheckError : public std::runtime_error {
 public:
  GradCheckError(const std::string& what, std::size_t group, Eigen::Index entry)
      : std::runtime_error(what), group_(group), entry_(entry) {}
  std::size_t group() const { return group_; }
  Eigen::Index entry() const { return entry_; }

 private:
  std::size_t group_;
  Eigen::Index entry_;
};

double relative_error(double analytic, double numeric);

// Max over every parameter entry of |analytic - central| / (|analytic| + |central| + 1e-12).
// `names` labels the groups in the report (optional; defaults to "param<k>").
// Throws GradCheckError naming the offending parameter when a NaN shows up.
GradCheckReport finite_diff_check(const LossBuilder& f, const std::vector<Mat>& params,
                                  double h = 1e-5,
                                  const std::vector<std::string>& names = {});

// Checks every registered primitive on random inputs in [-2, 2] (positive
// inputs for log). One entry per op kind, named by op_name().
std::vector<GroupError> check_primitives(unsigned seed, double h = 1e-5);

}  // namespace otfuse::ad
