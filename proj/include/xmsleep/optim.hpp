#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmsleep/params.hpp"

namespace xmsleep::diff {

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  std::uint64_t step_count = 0;
  // First/second moments keyed by parameter name, allocated on first update.
  // Stored as f32 so checkpoints round-trip exactly.
  std::unordered_map<std::string, std::vector<float>> m;
  std::unordered_map<std::string, std::vector<float>> v;
};

// One bias-corrected Adam update with coupled L2 weight decay (wd * theta is
// added to the gradient before the moments). Params with trainable == false
// are never touched. All grads are zeroed afterwards.
//
// Throws StateError if a trainable param carries no gradient.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState& state);

}  // namespace xmsleep::diff
