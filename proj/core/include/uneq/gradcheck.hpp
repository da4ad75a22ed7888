#pragma once

#include <functional>
#include <string>
#include <vector>

#include "uneq/tensor.hpp"

namespace uneq {

// Central finite differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate
// of x against the reverse-mode gradient. Returns the max relative error with
// denominator max(|a|, |b|, 1e-6). f must be scalar-valued; it is re-run on a
// fresh tape for every evaluation.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps);

struct GradCheckEntry {
  std::string name;
  // Max relative error across the entry's differentiable inputs for one seed.
  std::function<double(uint64_t seed)> run;
};

// One entry per differentiable op plus the composite losses, the network
// forwards, and the end-to-end tiny ensemble.
std::vector<GradCheckEntry> gradcheck_registry();

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  bool all_passed = true;
};

GradCheckReport run_gradcheck(const std::vector<GradCheckEntry>& entries,
                              uint64_t base_seed, int seeds, double tolerance);

}  // namespace uneq
