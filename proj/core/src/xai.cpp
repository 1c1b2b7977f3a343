#include "cfgmoe/xai.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "cfgmoe/error.hpp"

namespace cfgmoe {

namespace {

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::array<std::size_t, 2> top_two(const std::array<double, kNumExperts>& g) {
  std::array<std::size_t, kNumExperts> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  return {order[0], order[1]};
}

GateBox summarize(std::size_t expert, std::string role, std::vector<double> values) {
  GateBox box;
  box.expert = expert;
  box.role = std::move(role);
  box.count = values.size();
  if (values.empty()) return box;
  std::sort(values.begin(), values.end());
  box.min = values.front();
  box.max = values.back();
  box.q1 = quantile(values, 0.25);
  box.median = quantile(values, 0.5);
  box.q3 = quantile(values, 0.75);
  box.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return box;
}

}  // namespace

std::size_t kept_edge_count(std::size_t num_edges, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("sparsity " + std::to_string(s) + " is outside [0, 1]");
  const double target = (1.0 - s) * static_cast<double>(num_edges);
  const auto kept = static_cast<std::size_t>(std::ceil(target - 1e-9));
  return std::min(kept, num_edges);
}

std::vector<std::size_t> select_subgraph(std::span<const double> scores, double s) {
  const std::size_t keep = kept_edge_count(scores.size(), s);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

FidelityPair fidelity(const MoeModel& model, const Dataset& ds, std::span<const EdgeAttribution> attrs, double s) {
  if (ds.graphs.empty()) throw ValidationError("fidelity: empty dataset");
  if (attrs.size() != ds.graphs.size()) {
    throw ValidationError("fidelity: " + std::to_string(attrs.size()) + " attributions for " +
                          std::to_string(ds.graphs.size()) + " graphs");
  }
  std::size_t same_without = 0;
  std::size_t same_with = 0;
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    const Cfg& g = ds.graphs[i];
    if (attrs[i].scores.size() != g.edges.size()) {
      throw ValidationError("fidelity: attribution " + std::to_string(i) + " does not match graph '" + g.id + "'");
    }
    const auto keep = select_subgraph(attrs[i].scores, s);
    std::vector<char> in_s(g.edges.size(), 0);
    for (auto e : keep) in_s[e] = 1;
    std::vector<std::size_t> rest;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      if (!in_s[e]) rest.push_back(e);
    }
    const int full = predict(model, g);
    same_without += predict(model, with_edges(g, rest)) == full ? 1 : 0;
    same_with += predict(model, with_edges(g, keep)) == full ? 1 : 0;
  }
  const double n = static_cast<double>(ds.graphs.size());
  return {1.0 - static_cast<double>(same_without) / n, 1.0 - static_cast<double>(same_with) / n};
}

double characterization(double fplus, double fminus, double wplus, double wminus) {
  if (std::abs(wplus + wminus - 1.0) > 1e-12) throw ValidationError("characterization: weights must sum to 1");
  const double den = wplus * (1.0 - fminus) + wminus * fplus;
  if (den == 0.0) return 0.0;
  return (wplus + wminus) * fplus * (1.0 - fminus) / den;
}

double router_entropy(std::span<const double> gates) {
  if (gates.size() != kNumExperts) throw ValidationError("router_entropy: expected 6 gate values");
  double h = 0.0;
  for (double a : gates) {
    if (a > 0.0) h -= a * std::log(a);
  }
  return h / std::log(static_cast<double>(kNumExperts));
}

double reference_entropy(std::size_t k) {
  return std::log(static_cast<double>(k)) / std::log(static_cast<double>(kNumExperts));
}

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile: empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

EcdfSummary entropy_ecdf(std::span<const double> values) {
  if (values.empty()) throw ValidationError("entropy_ecdf: empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  EcdfSummary out;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    out.values.push_back(sorted[i]);
    out.fraction.push_back(static_cast<double>(i + 1) / n);
  }
  out.q25 = quantile(sorted, 0.25);
  out.median = quantile(sorted, 0.5);
  out.q75 = quantile(sorted, 0.75);
  for (std::size_t k = 2; k <= 4; ++k) out.reference[k - 2] = reference_entropy(k);
  return out;
}

CoselectionMatrix coselection_matrix(std::span<const std::array<double, kNumExperts>> gates) {
  CoselectionMatrix m{};
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const auto nonzero = std::count_if(gates[i].begin(), gates[i].end(), [](double a) { return a != 0.0; });
    if (nonzero != 2) {
      throw ValidationError("coselection_matrix: gate vector " + std::to_string(i) + " has " +
                            std::to_string(nonzero) + " nonzero entries, expected 2");
    }
    const auto [first, second] = top_two(gates[i]);
    ++m[first][second];
  }
  return m;
}

double coselection_entropy(const CoselectionMatrix& m) {
  double total = 0.0;
  for (const auto& row : m) {
    for (auto c : row) total += static_cast<double>(c);
  }
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (const auto& row : m) {
    for (auto c : row) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

std::vector<GateBox> gate_boxes(std::span<const std::array<double, kNumExperts>> gates) {
  std::array<std::vector<double>, kNumExperts> all, first, second;
  for (const auto& g : gates) {
    const auto [a, b] = top_two(g);
    for (std::size_t e = 0; e < kNumExperts; ++e) all[e].push_back(g[e]);
    first[a].push_back(g[a]);
    second[b].push_back(g[b]);
  }
  std::vector<GateBox> boxes;
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    boxes.push_back(summarize(e, "all", std::move(all[e])));
    boxes.push_back(summarize(e, "top1", std::move(first[e])));
    boxes.push_back(summarize(e, "top2", std::move(second[e])));
  }
  return boxes;
}

std::vector<double> default_sparsity_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(static_cast<double>(i) / 20.0);
  return grid;
}

XaiEvalResult run_xai_eval(const MoeModel& model, const Dataset& ds, const XaiEvalOptions& options) {
  if (ds.graphs.empty()) throw ValidationError("xai-eval: empty dataset");
  for (double s : options.sparsity) kept_edge_count(0, s);

  XaiEvalResult r;
  const std::size_t n = ds.graphs.size();
  r.explanations.resize(n);
  parallel_for(n, options.threads, [&](std::size_t i) { r.explanations[i] = explain(model, ds.graphs[i], options.explain); });

  std::vector<EdgeAttribution> attrs;
  std::vector<std::array<double, kNumExperts>> gates;
  for (const auto& ex : r.explanations) {
    attrs.push_back(ex.aggregated);
    gates.push_back(ex.gates);
    r.entropies.push_back(router_entropy(ex.gates));
  }

  // Per-graph agreement counts for every sparsity level, computed in parallel.
  const std::size_t levels = options.sparsity.size();
  std::vector<std::array<std::size_t, 2>> agree(n * levels);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const Dataset one{{ds.graphs[i]}};
    for (std::size_t l = 0; l < levels; ++l) {
      const FidelityPair f = fidelity(model, one, std::span(attrs).subspan(i, 1), options.sparsity[l]);
      agree[i * levels + l] = {f.plus == 0.0 ? 1u : 0u, f.minus == 0.0 ? 1u : 0u};
    }
  });
  for (std::size_t l = 0; l < levels; ++l) {
    std::size_t plus = 0, minus = 0;
    for (std::size_t i = 0; i < n; ++i) {
      plus += agree[i * levels + l][0];
      minus += agree[i * levels + l][1];
    }
    FidelityRow row;
    row.sparsity = options.sparsity[l];
    row.fidelity.plus = 1.0 - static_cast<double>(plus) / static_cast<double>(n);
    row.fidelity.minus = 1.0 - static_cast<double>(minus) / static_cast<double>(n);
    row.characterization = characterization(row.fidelity.plus, row.fidelity.minus);
    r.fidelity.push_back(row);
  }

  r.ecdf = entropy_ecdf(r.entropies);
  if (model.config().variant == GateVariant::TopK && model.config().k == 2) r.coselection = coselection_matrix(gates);
  r.boxes = gate_boxes(gates);
  return r;
}

CsvTable fidelity_table(std::span<const FidelityRow> rows, const std::string& variant) {
  CsvTable t({"variant", "sparsity", "fidelity_plus", "fidelity_minus", "characterization"});
  for (const auto& r : rows) {
    t.add_row({variant, format_double(r.sparsity), format_double(r.fidelity.plus), format_double(r.fidelity.minus),
               format_double(r.characterization)});
  }
  return t;
}

CsvTable ecdf_table(const EcdfSummary& e) {
  CsvTable t({"kind", "key", "value"});
  for (std::size_t i = 0; i < e.values.size(); ++i) t.add_row({"ecdf", format_double(e.values[i]), format_double(e.fraction[i])});
  t.add_row({"quantile", "0.25", format_double(e.q25)});
  t.add_row({"quantile", "0.5", format_double(e.median)});
  t.add_row({"quantile", "0.75", format_double(e.q75)});
  for (std::size_t k = 0; k < e.reference.size(); ++k) {
    t.add_row({"reference", std::to_string(k + 2), format_double(e.reference[k])});
  }
  return t;
}

CsvTable coselection_table(const CoselectionMatrix& m) {
  std::vector<std::string> header = {"top1"};
  for (std::size_t e = 0; e < kNumExperts; ++e) header.push_back(expert_name(e));
  CsvTable t(std::move(header));
  for (std::size_t a = 0; a < kNumExperts; ++a) {
    std::vector<std::string> row = {expert_name(a)};
    for (std::size_t b = 0; b < kNumExperts; ++b) row.push_back(std::to_string(m[a][b]));
    t.add_row(std::move(row));
  }
  return t;
}

CsvTable gate_box_table(std::span<const GateBox> boxes) {
  CsvTable t({"expert", "role", "count", "min", "q1", "median", "q3", "max", "mean"});
  for (const auto& b : boxes) {
    std::vector<std::string> row = {expert_name(b.expert), b.role, std::to_string(b.count)};
    for (double v : {b.min, b.q1, b.median, b.q3, b.max, b.mean}) row.push_back(b.count ? format_double(v) : "");
    t.add_row(std::move(row));
  }
  return t;
}

}  // namespace cfgmoe
