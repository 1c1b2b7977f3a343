#pragma once

#include <array>
#include <span>
#include <string>

namespace cfgmoe {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Binary classification summary. Confusion counts treat class 1 (malicious)
/// as positive; per_class[c] treats class c as positive. Undefined ratios are 0.
struct MetricsReport {
  std::array<ClassScores, 2> per_class{};
  double accuracy = 0.0;
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
  std::string to_json() const;
};

MetricsReport classify_metrics(std::span<const int> predictions, std::span<const int> labels);

}  // namespace cfgmoe
