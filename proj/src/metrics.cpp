#include "xmsleep/metrics.hpp"

#include "xmsleep/errors.hpp"

namespace xmsleep {

nlohmann::json Metrics::to_json() const {
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : confusion) conf.push_back(row);
  return {{"accuracy", accuracy},   {"macro_f1", macro_f1},
          {"per_class_f1", per_class_f1}, {"confusion", conf},
          {"count", count},         {"absent_classes", absent_classes}};
}

Metrics metrics_from_confusion(
    const std::array<std::array<std::int64_t, kMetricClasses>, kMetricClasses>& confusion) {
  Metrics m;
  m.confusion = confusion;
  std::int64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < kMetricClasses; ++i) {
    for (std::size_t j = 0; j < kMetricClasses; ++j) {
      if (confusion[i][j] < 0) throw InputError("confusion entries must be non-negative");
      total += confusion[i][j];
    }
    correct += confusion[i][i];
  }
  if (total == 0) throw EvaluationError("no scored epochs");
  m.count = std::size_t(total);
  m.accuracy = double(correct) / double(total);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < kMetricClasses; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::size_t k = 0; k < kMetricClasses; ++k) {
      row += confusion[c][k];
      col += confusion[k][c];
    }
    const std::int64_t tp = confusion[c][c];
    const std::int64_t denom = row + col;  // 2TP + FP + FN
    if (row == 0 && col == 0) m.absent_classes.push_back(int(c));
    m.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
    f1_sum += m.per_class_f1[c];
  }
  m.macro_f1 = f1_sum / double(kMetricClasses);
  return m;
}

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw EvaluationError("truth has " + std::to_string(truth.size()) + " labels, predictions " +
                          std::to_string(predicted.size()));
  }
  std::array<std::array<std::int64_t, kMetricClasses>, kMetricClasses> conf{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= int(kMetricClasses) || p < 0 || p >= int(kMetricClasses)) {
      throw InputError("label out of range at index " + std::to_string(i));
    }
    ++conf[std::size_t(t)][std::size_t(p)];
  }
  return metrics_from_confusion(conf);
}

}  // namespace xmsleep
