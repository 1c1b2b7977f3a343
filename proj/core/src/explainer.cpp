#include "cfgmoe/explainer.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

void check_mask(const Cfg& g, std::span<const double> mask) {
  if (mask.size() != g.edges.size()) {
    throw ValidationError("mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(g.edges.size()) + " edges");
  }
  for (std::size_t e = 0; e < mask.size(); ++e) {
    if (!(mask[e] >= 0.0 && mask[e] <= 1.0)) {
      throw ValidationError("mask entry " + std::to_string(e) + " is outside [0, 1]");
    }
  }
}

}  // namespace

ModelOutput masked_forward(const MoeModel& model, const Cfg& g, std::span<const double> mask) {
  check_mask(g, mask);
  ad::Tape tape;
  const BoundParameters p = bind_parameters(tape, model.parameters(), false);
  const GraphBatch b = make_batch(g);
  ForwardOptions options;
  options.edge_mask = tape.constant(Tensor(Shape{mask.size(), 1}, std::vector<double>(mask.begin(), mask.end())));
  const ForwardResult r = forward(tape, model, p, b, options);

  ModelOutput o;
  for (std::size_t k = 0; k < kNumClasses; ++k) o.logits[k] = r.logits.value()(0, k);
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    o.gates[e] = r.gates.value()(0, e);
    for (std::size_t k = 0; k < kNumClasses; ++k) o.expert_logits[e][k] = r.expert_logits[e].value()(0, k);
    const auto row = r.readouts[e].value().row_span(0);
    o.readouts[e].assign(row.begin(), row.end());
  }
  o.predicted = o.logits[1] > o.logits[0] ? 1 : 0;
  return o;
}

std::vector<std::vector<double>> path_integrated_gradients(const PathTargetFn& f, std::size_t n,
                                                           const IgOptions& options) {
  if (options.steps == 0) throw ValidationError("integrated_gradients: steps must be >= 1");
  std::vector<std::vector<double>> sums;
  if (n == 0) return sums;
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  const double m = static_cast<double>(options.steps);
  for (std::size_t start = 0; start < options.steps; start += chunk) {
    const std::size_t copies = std::min(chunk, options.steps - start);
    ad::Tape tape;
    Tensor alphas = Tensor::zeros(copies * n, 1);
    // Midpoints t in (0, 1) mapped to a = t^2; da = 2t dt.
    std::vector<double> weight(copies);
    for (std::size_t c = 0; c < copies; ++c) {
      const double t = (static_cast<double>(start + c) + 0.5) / m;
      weight[c] = 2.0 * t / m;
      for (std::size_t j = 0; j < n; ++j) alphas[c * n + j] = t * t;
    }
    const ad::Var mask = tape.variable(std::move(alphas));
    const std::vector<ad::Var> targets = f(tape, mask, copies);
    sums.resize(targets.size(), std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const Tensor grad = tape.backward(targets[i]).of(mask);
      for (std::size_t c = 0; c < copies; ++c) {
        for (std::size_t j = 0; j < n; ++j) sums[i][j] += weight[c] * grad[c * n + j];
      }
    }
  }
  return sums;
}

std::vector<EdgeAttribution> integrated_gradients(const MoeModel& model, const Cfg& g,
                                                  std::span<const std::size_t> experts, int target_class,
                                                  const IgOptions& options) {
  if (options.steps == 0) throw ValidationError("integrated_gradients: steps must be >= 1");
  if (target_class != 0 && target_class != 1) throw ValidationError("integrated_gradients: target class must be 0 or 1");
  for (std::size_t e : experts) {
    if (e >= kNumExperts) throw ValidationError("integrated_gradients: expert index " + std::to_string(e) + " out of range");
  }
  const std::size_t E = g.edges.size();
  std::vector<EdgeAttribution> out(experts.size());
  for (std::size_t i = 0; i < experts.size(); ++i) {
    out[i].scores.assign(E, 0.0);
    out[i].expert = static_cast<int>(experts[i]);
    out[i].target_class = target_class;
  }
  if (E == 0 || experts.empty()) return out;

  const std::vector<std::size_t> chosen(experts.begin(), experts.end());
  const PathTargetFn f = [&](ad::Tape& tape, ad::Var mask, std::size_t copies) {
    const std::vector<const Cfg*> members(copies, &g);
    const GraphBatch b = make_batch(members);
    const BoundParameters p = bind_parameters(tape, model.parameters(), false);
    ForwardOptions fo;
    fo.edge_mask = mask;
    const ForwardResult r = forward(tape, model, p, b, fo);
    std::vector<ad::Var> targets;
    for (std::size_t e : chosen) {
      targets.push_back(ad::sum(ad::slice_cols(r.expert_logits[e], static_cast<std::size_t>(target_class), 1)));
    }
    return targets;
  };
  const auto sums = path_integrated_gradients(f, E, options);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    for (std::size_t j = 0; j < E; ++j) {
      if (!std::isfinite(sums[i][j])) {
        throw DivergenceError("integrated_gradients: non-finite gradient on edge " + std::to_string(j) + " (" +
                              std::to_string(g.edges[j].src) + " -> " + std::to_string(g.edges[j].dst) + ")");
      }
      out[i].scores[j] = sums[i][j];
    }
  }
  return out;
}
EdgeAttribution integrated_gradients(const MoeModel& model, const Cfg& g, std::size_t expert, int target_class,
                                     const IgOptions& options) {
  const std::size_t one[] = {expert};
  return integrated_gradients(model, g, one, target_class, options).front();
}

EdgeAttribution normalize_scores(EdgeAttribution attr) {
  double peak = 0.0;
  for (double s : attr.scores) peak = std::max(peak, std::abs(s));
  if (peak > 0.0) {
    for (double& s : attr.scores) s /= peak;
  }
  attr.normalized = true;
  return attr;
}

EdgeAttribution routing_aware_aggregate(std::span<const EdgeAttribution> attrs,
                                        const std::array<double, kNumExperts>& gates) {
  std::array<const EdgeAttribution*, kNumExperts> by_expert{};
  for (const auto& a : attrs) {
    if (a.expert < 0 || a.expert >= static_cast<int>(kNumExperts)) {
      throw ValidationError("routing_aware_aggregate: attribution without an expert index");
    }
    const auto e = static_cast<std::size_t>(a.expert);
    if (by_expert[e]) throw ValidationError("routing_aware_aggregate: two attributions for " + expert_name(e));
    if (gates[e] == 0.0) throw ValidationError("routing_aware_aggregate: " + expert_name(e) + " is not selected");
    if (a.scores.size() != attrs.front().scores.size()) {
      throw ValidationError("routing_aware_aggregate: attributions have different edge counts");
    }
    by_expert[e] = &a;
  }

  EdgeAttribution out;
  out.expert = kAggregated;
  out.normalized = !attrs.empty();
  out.target_class = attrs.empty() ? 0 : attrs.front().target_class;
  out.scores.assign(attrs.empty() ? 0 : attrs.front().scores.size(), 0.0);
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    if (gates[e] == 0.0) continue;
    if (!by_expert[e]) throw ValidationError("routing_aware_aggregate: missing attribution for " + expert_name(e));
    out.normalized = out.normalized && by_expert[e]->normalized;
    for (std::size_t j = 0; j < out.scores.size(); ++j) out.scores[j] += gates[e] * by_expert[e]->scores[j];
  }
  return out;
}

Explanation explain(const MoeModel& model, const Cfg& g, const ExplainOptions& options) {
  const ModelOutput base = model_forward(model, g);
  Explanation ex;
  ex.graph_id = g.id;
  ex.predicted_class = base.predicted;
  ex.gates = base.gates;

  std::vector<std::size_t> selected;
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    if (base.gates[e] > 0.0) selected.push_back(e);
  }
  ex.experts = integrated_gradients(model, g, selected, base.predicted, options.ig);
  if (options.normalize) {
    for (auto& a : ex.experts) a = normalize_scores(std::move(a));
  }
  ex.aggregated = routing_aware_aggregate(ex.experts, ex.gates);
  ex.aggregated.target_class = base.predicted;
  return ex;
}

std::string explanation_json(const Explanation& e) {
  nlohmann::ordered_json doc;
  doc["graph_id"] = e.graph_id;
  doc["predicted_class"] = e.predicted_class;
  doc["gates"] = e.gates;
  doc["normalized"] = e.aggregated.normalized;
  doc["experts"] = nlohmann::ordered_json::object();
  for (const auto& a : e.experts) doc["experts"][expert_name(static_cast<std::size_t>(a.expert))] = a.scores;
  doc["aggregated"] = e.aggregated.scores;
  return doc.dump(2) + "\n";
}

}  // namespace cfgmoe
