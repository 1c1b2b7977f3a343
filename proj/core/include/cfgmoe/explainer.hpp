#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/moe.hpp"

namespace cfgmoe {

inline constexpr int kAggregated = -1;

struct EdgeAttribution {
  std::vector<double> scores;  // one per stored edge
  int expert = kAggregated;    // 0-based expert index, or kAggregated
  int target_class = 0;
  bool normalized = false;
};

/// Forward pass with every edge weight scaled by mask[e] in [0, 1]; mask = 1
/// reproduces model_forward exactly and mask[e] = 0 removes edge e.
ModelOutput masked_forward(const MoeModel& model, const Cfg& g, std::span<const double> mask);

struct IgOptions {
  std::size_t steps = 64;
  /// Riemann points evaluated per forward pass (the graph is replicated).
  std::size_t chunk = 16;
};

/// Builds scalar targets on `tape` from `copies` stacked path points: `mask`
/// is (copies * n) x 1 and copy c owns rows [c*n, (c+1)*n). Each target must
/// sum its per-copy values so the copies stay independent.
using PathTargetFn = std::function<std::vector<ad::Var>(ad::Tape& tape, ad::Var mask, std::size_t copies)>;

/// Integrated gradients of every target along the straight path from the zero
/// vector to the ones vector in R^n. The path is parameterized as a = t^2 and
/// integrated with the midpoint rule in t, so the baseline itself is never
/// evaluated and points cluster near it, where sqrt-like terms of the std
/// channels change fastest. Exact for functions linear in a. Returns one row
/// per target; non-finite gradients propagate into the sums.
std::vector<std::vector<double>> path_integrated_gradients(const PathTargetFn& f, std::size_t n,
                                                           const IgOptions& options = {});

/// Edge-mask integrated gradients of expert `expert`'s logit for `target_class`,
/// from the all-zero mask to the all-ones mask (see path_integrated_gradients).
EdgeAttribution integrated_gradients(const MoeModel& model, const Cfg& g, std::size_t expert, int target_class,
                                     const IgOptions& options = {});

/// Same for several experts sharing forward passes.
std::vector<EdgeAttribution> integrated_gradients(const MoeModel& model, const Cfg& g,
                                                  std::span<const std::size_t> experts, int target_class,
                                                  const IgOptions& options = {});

/// Divides by the largest absolute score; all-zero scores are left unchanged.
EdgeAttribution normalize_scores(EdgeAttribution attr);

/// Gate-weighted sum over the experts with a nonzero gate. `attrs` must hold
/// exactly one attribution for each of those experts.
EdgeAttribution routing_aware_aggregate(std::span<const EdgeAttribution> attrs,
                                        const std::array<double, kNumExperts>& gates);

struct ExplainOptions {
  IgOptions ig;
  bool normalize = true;
};

struct Explanation {
  std::string graph_id;
  int predicted_class = 0;
  std::array<double, kNumExperts> gates{};
  std::vector<EdgeAttribution> experts;  // selected experts, ascending index
  EdgeAttribution aggregated;
};

Explanation explain(const MoeModel& model, const Cfg& g, const ExplainOptions& options = {});

std::string explanation_json(const Explanation& e);

}  // namespace cfgmoe
