#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace xmsleep {

inline constexpr std::size_t kMetricClasses = 5;

struct Metrics {
  // rows = true stage, cols = predicted stage
  std::array<std::array<std::int64_t, kMetricClasses>, kMetricClasses> confusion{};
  std::size_t count = 0;
  double accuracy = 0.0;
  std::array<double, kMetricClasses> per_class_f1{};
  double macro_f1 = 0.0;
  // Classes absent from both truth and predictions; their F1 is 0.
  std::vector<int> absent_classes;

  nlohmann::json to_json() const;
};

// Throws EvaluationError on empty input or mismatched lengths, InputError on
// labels outside 0..4.
Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

// Same rules starting from a confusion matrix.
Metrics metrics_from_confusion(
    const std::array<std::array<std::int64_t, kMetricClasses>, kMetricClasses>& confusion);

}  // namespace xmsleep
