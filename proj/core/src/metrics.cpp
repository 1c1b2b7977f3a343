#include "cfgmoe/metrics.hpp"

#include <json.hpp>

#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassScores scores(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScores s;
  s.precision = ratio(tp, tp + fp);
  s.recall = ratio(tp, tp + fn);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.support = tp + fn;
  return s;
}

}  // namespace

MetricsReport classify_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw ValidationError("classify_metrics: empty input");
  if (predictions.size() != labels.size()) {
    throw ValidationError("classify_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  MetricsReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw ValidationError("classify_metrics: entry " + std::to_string(i) + " is not binary");
    }
    if (p == 1 && y == 1) ++r.tp;
    if (p == 0 && y == 0) ++r.tn;
    if (p == 1 && y == 0) ++r.fp;
    if (p == 0 && y == 1) ++r.fn;
  }
  r.per_class[1] = scores(r.tp, r.fp, r.fn);
  r.per_class[0] = scores(r.tn, r.fn, r.fp);
  r.accuracy = ratio(r.tp + r.tn, r.total());
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["accuracy"] = accuracy;
  doc["confusion"] = {{"tp", tp}, {"tn", tn}, {"fp", fp}, {"fn", fn}};
  const char* names[] = {"benign", "malicious"};
  for (int c = 0; c < 2; ++c) {
    doc["per_class"][names[c]] = {{"precision", per_class[c].precision},
                                  {"recall", per_class[c].recall},
                                  {"f1", per_class[c].f1},
                                  {"support", per_class[c].support}};
  }
  return doc.dump(2) + "\n";
}

}  // namespace cfgmoe
