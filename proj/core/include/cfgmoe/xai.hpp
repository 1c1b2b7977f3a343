#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/csv.hpp"
#include "cfgmoe/explainer.hpp"
#include "cfgmoe/moe.hpp"

namespace cfgmoe {

/// Number of edges kept at sparsity s: ceil((1-s)|E|), tolerant of rounding
/// noise in (1-s)|E|.
std::size_t kept_edge_count(std::size_t num_edges, double s);

/// Indices (ascending) of the kept_edge_count highest-scoring edges; ties go
/// to the lower index.
std::vector<std::size_t> select_subgraph(std::span<const double> scores, double s);

struct FidelityPair {
  double plus = 0.0;
  double minus = 0.0;
};

/// Prediction agreement after deleting the selected edges (plus) or keeping
/// only them (minus), against the prediction on the full graph.
FidelityPair fidelity(const MoeModel& model, const Dataset& ds, std::span<const EdgeAttribution> attrs, double s);

/// Weighted harmonic mean of F+ and 1-F-; 0 when the denominator vanishes.
double characterization(double fplus, double fminus, double wplus = 0.5, double wminus = 0.5);

/// Shannon entropy of the gates divided by log 6.
double router_entropy(std::span<const double> gates);
/// log k / log 6.
double reference_entropy(std::size_t k);

/// Linear interpolation between closest ranks; `sorted` ascending, nonempty.
double quantile(std::span<const double> sorted, double q);

struct EcdfSummary {
  std::vector<double> values;    // sorted sample points
  std::vector<double> fraction;  // fraction of samples <= values[i]
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  std::array<double, 3> reference{};  // k = 2, 3, 4
};

EcdfSummary entropy_ecdf(std::span<const double> values);

/// counts[top1][top2] over gate vectors with exactly two nonzero entries.
using CoselectionMatrix = std::array<std::array<std::size_t, kNumExperts>, kNumExperts>;

CoselectionMatrix coselection_matrix(std::span<const std::array<double, kNumExperts>> gates);
/// Shannon entropy (nats) of the normalized histogram.
double coselection_entropy(const CoselectionMatrix& m);

struct GateBox {
  std::size_t expert = 0;
  std::string role;  // "all", "top1" or "top2"
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
};

/// Distribution of each expert's gate weight over all samples and over the
/// samples where it ranks first or second (ties to the lower index).
std::vector<GateBox> gate_boxes(std::span<const std::array<double, kNumExperts>> gates);

struct FidelityRow {
  double sparsity = 0.0;
  FidelityPair fidelity;
  double characterization = 0.0;
};

struct XaiEvalOptions {
  ExplainOptions explain;
  std::vector<double> sparsity;
  std::size_t threads = 0;  // 0: hardware concurrency
};

std::vector<double> default_sparsity_grid();  // 0.05, 0.10, ..., 0.95

struct XaiEvalResult {
  std::vector<Explanation> explanations;
  std::vector<FidelityRow> fidelity;
  std::vector<double> entropies;
  EcdfSummary ecdf;
  std::optional<CoselectionMatrix> coselection;  // top-2 models only
  std::vector<GateBox> boxes;
};

XaiEvalResult run_xai_eval(const MoeModel& model, const Dataset& ds, const XaiEvalOptions& options);

CsvTable fidelity_table(std::span<const FidelityRow> rows, const std::string& variant);
CsvTable ecdf_table(const EcdfSummary& ecdf);
CsvTable coselection_table(const CoselectionMatrix& m);
CsvTable gate_box_table(std::span<const GateBox> boxes);

}  // namespace cfgmoe
