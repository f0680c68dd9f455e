#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xmsleep/tensor.hpp"

namespace xmsleep::diff {

// Central finite differences over every coordinate of `inputs`. `f` must be a
// deterministic scalar function of the (shared) input tensors. Returns the max
// over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Throws EvaluationError if f is non-finite anywhere it is evaluated.
double grad_check(const std::function<Tensor<double>()>& f,
                  const std::vector<Tensor<double>>& inputs, double step = 1e-6);

struct GradCheckOptions {
  double step = 1e-6;
  // When the central estimates at h and h/2 disagree by more than
  // `kink_ratio` (relative), the interval may straddle a ReLU or max-pool
  // kink: up to `kink_retries` steps h, h/10, ... are tried and the estimate
  // of the most consistent pair is used.
  int kink_retries = 0;
  double kink_ratio = 1e-6;
};

double grad_check(const std::function<Tensor<double>()>& f,
                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// The full suite: every differentiable op (tolerance 1e-5) plus the
// epoch-level, contrastive and masked-sequence compositions (1e-4).
std::vector<GradCheckResult> run_gradcheck_suite(unsigned seed = 7);

}  // namespace xmsleep::diff
