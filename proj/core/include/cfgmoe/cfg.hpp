#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfgmoe/tensor.hpp"

namespace cfgmoe {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

inline constexpr int kBenign = 0;
inline constexpr int kMalicious = 1;

/// Control flow graph: basic blocks as nodes, directed transfers as edges,
/// one feature row per node.
struct Cfg {
  std::string id;
  int label = kBenign;
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Tensor features;  // num_nodes x d

  std::size_t feature_dim() const noexcept { return features.cols(); }

  /// Throws ValidationError on out-of-range endpoints, self-loops, duplicate
  /// edges, a feature row count different from num_nodes, or a bad label.
  void validate() const;

  friend bool operator==(const Cfg&, const Cfg&) = default;
};

/// Undirected view of a CFG. Each unordered node pair {a, b} (a < b) that is
/// joined by at least one stored edge appears once, together with the stored
/// edge indices realizing it (one, or two for reciprocal edges).
struct UndirectedView {
  struct Pair {
    std::size_t a = 0;
    std::size_t b = 0;
    std::array<std::size_t, 2> edges{};
    std::size_t edge_count = 0;
  };
  std::vector<Pair> pairs;
};

UndirectedView undirected_view(const Cfg& g);

/// Number of distinct neighbors of each node, ignoring edge direction.
std::vector<std::size_t> degrees(const Cfg& g);

/// Same graph keeping only the listed edges, in their original relative order.
Cfg with_edges(const Cfg& g, std::span<const std::size_t> keep);

struct Dataset {
  std::vector<Cfg> graphs;

  std::array<std::size_t, 2> class_counts() const;
  std::size_t size() const noexcept { return graphs.size(); }
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class shuffled split. Each class contributes round(fraction * count)
/// graphs to train, clamped so both sides keep at least one graph per class.
DatasetSplit stratified_split(const Dataset& ds, SplitSpec spec);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

struct SynthSpec {
  std::size_t per_class = 100;
  std::size_t feature_dim = 64;
  std::uint64_t seed = 0;
};

/// Desk-scale stand-in for a malware CFG corpus. Benign graphs are chains of
/// 20-60 blocks with a few branch/loop edges; malicious graphs add 1-3 star
/// motifs (5-10 leaves) onto such a chain. Node features are unit-variance
/// Gaussians whose first four dimensions have mean -0.5 (benign) or +0.5
/// (malicious).
Dataset synth_dataset(const SynthSpec& spec);

double degree_variance(const Cfg& g);

}  // namespace cfgmoe
