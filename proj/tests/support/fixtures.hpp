#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/moe.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

// Readable gtest failure output for tensors.
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << shape_string(t.shape()) << " {";
  for (std::size_t i = 0; i < t.size() && i < 16; ++i) *os << (i ? ", " : "") << t[i];
  *os << (t.size() > 16 ? ", ...}" : "}");
}

}  // namespace cfgmoe

namespace cfgmoe::testing {

/// Random directed graph without self-loops or duplicates; roughly a third of
/// the undirected pairs that get an edge receive the reciprocal one too.
inline Cfg random_graph(std::size_t n, double p, std::size_t d, Rng& rng, int label = 0) {
  Cfg g;
  g.id = "rand";
  g.label = label;
  g.num_nodes = n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!rng.bernoulli(p)) continue;
      const bool forward = rng.bernoulli(0.5);
      g.edges.push_back(forward ? Edge{i, j} : Edge{j, i});
      if (rng.bernoulli(1.0 / 3.0)) g.edges.push_back(forward ? Edge{j, i} : Edge{i, j});
    }
  }
  g.features = Tensor::zeros(n, d);
  for (auto& v : g.features.values()) v = rng.uniform(-1.0, 1.0);
  return g;
}

inline Cfg path_graph(std::size_t n, std::size_t d, double fill = 1.0) {
  Cfg g;
  g.id = "path";
  g.num_nodes = n;
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  g.features = Tensor::full(n, d, fill);
  return g;
}

inline Cfg star_graph(std::size_t leaves, std::size_t d) {
  Cfg g;
  g.id = "star";
  g.num_nodes = leaves + 1;
  for (std::size_t i = 1; i <= leaves; ++i) g.edges.push_back({0, i});
  g.features = Tensor::full(leaves + 1, d, 1.0);
  return g;
}

inline MoeConfig small_config(GateVariant variant, std::size_t d = 3, std::size_t hidden = 4, std::size_t layers = 2) {
  MoeConfig c;
  c.input_dim = d;
  c.hidden = hidden;
  c.layers = layers;
  c.variant = variant;
  c.k = 2;
  return c;
}

/// Biases are zero after initialization; give them random values so the
/// oracle comparisons exercise every parameter.
inline void randomize_biases(MoeModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : m.parameters()) {
    if (name.ends_with(".bias")) {
      for (auto& v : t.values()) v = rng.uniform(-0.5, 0.5);
    }
  }
}

}  // namespace cfgmoe::testing
