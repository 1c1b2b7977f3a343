#include "cfgmoe/cfg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

void Cfg::validate() const {
  if (label != kBenign && label != kMalicious) {
    throw ValidationError("graph '" + id + "': label " + std::to_string(label) + " is not 0 or 1");
  }
  if (features.rows() != num_nodes || (num_nodes > 0 && features.rank() != 2)) {
    throw ValidationError("graph '" + id + "': feature matrix has " + std::to_string(features.rows()) +
                          " rows for " + std::to_string(num_nodes) + " nodes");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Edge& edge = edges[e];
    const std::string name = "edge " + std::to_string(e) + " (" + std::to_string(edge.src) + " -> " +
                             std::to_string(edge.dst) + ")";
    if (edge.src >= num_nodes || edge.dst >= num_nodes) {
      throw ValidationError("graph '" + id + "': " + name + " has an endpoint >= num_nodes " +
                            std::to_string(num_nodes));
    }
    if (edge.src == edge.dst) throw ValidationError("graph '" + id + "': " + name + " is a self-loop");
    if (!seen.emplace(edge.src, edge.dst).second) {
      throw ValidationError("graph '" + id + "': " + name + " is a duplicate");
    }
  }
  if (!features.all_finite()) throw ValidationError("graph '" + id + "': non-finite feature value");
}

UndirectedView undirected_view(const Cfg& g) {
  UndirectedView view;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [lo, hi] = std::minmax(g.edges[e].src, g.edges[e].dst);
    auto [it, inserted] = index.try_emplace({lo, hi}, view.pairs.size());
    if (inserted) {
      UndirectedView::Pair p;
      p.a = lo;
      p.b = hi;
      view.pairs.push_back(p);
    }
    auto& pair = view.pairs[it->second];
    pair.edges[pair.edge_count++] = e;
  }
  return view;
}

std::vector<std::size_t> degrees(const Cfg& g) {
  std::vector<std::size_t> deg(g.num_nodes, 0);
  for (const auto& p : undirected_view(g).pairs) {
    ++deg[p.a];
    ++deg[p.b];
  }
  return deg;
}

Cfg with_edges(const Cfg& g, std::span<const std::size_t> keep) {
  std::vector<char> keep_flag(g.edges.size(), 0);
  for (std::size_t e : keep) {
    if (e >= g.edges.size()) throw ValidationError("with_edges: edge index " + std::to_string(e) + " out of range");
    keep_flag[e] = 1;
  }
  Cfg out;
  out.id = g.id;
  out.label = g.label;
  out.num_nodes = g.num_nodes;
  out.features = g.features;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (keep_flag[e]) out.edges.push_back(g.edges[e]);
  }
  return out;
}

std::array<std::size_t, 2> Dataset::class_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& g : graphs) ++counts.at(static_cast<std::size_t>(g.label));
  return counts;
}

DatasetSplit stratified_split(const Dataset& ds, SplitSpec spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ValidationError("stratified_split: train fraction must lie in (0, 1)");
  }
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) by_class.at(static_cast<std::size_t>(ds.graphs[i].label)).push_back(i);
  Rng rng(spec.seed);
  DatasetSplit split;
  for (int c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    if (members.size() < 2) {
      throw ValidationError("stratified_split: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " graph(s), need at least 2");
    }
    rng.shuffle(members);
    auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(members.size()) + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.graphs.reserve(indices.size());
  for (std::size_t i : indices) out.graphs.push_back(ds.graphs.at(i));
  return out;
}

namespace {

void add_edge(Cfg& g, std::set<std::pair<std::size_t, std::size_t>>& present, std::size_t s, std::size_t d) {
  if (s == d || !present.emplace(s, d).second) return;
  g.edges.push_back({s, d});
}

// Chain 0 -> 1 -> ... -> n-1 plus a few short forward branches and loop back edges.
void chain_backbone(Cfg& g, std::size_t n, Rng& rng, std::set<std::pair<std::size_t, std::size_t>>& present) {
  for (std::size_t i = 0; i + 1 < n; ++i) add_edge(g, present, i, i + 1);
  const auto extra = static_cast<std::size_t>(rng.uniform_int(1, std::max<std::int64_t>(1, static_cast<std::int64_t>(n / 10))));
  for (std::size_t k = 0; k < extra; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1)));
    const auto jump = static_cast<std::size_t>(rng.uniform_int(2, 4));
    if (rng.bernoulli(0.5)) {
      if (i + jump < n) add_edge(g, present, i, i + jump);
    } else if (i >= jump) {
      add_edge(g, present, i, i - jump);
    }
  }
}

Cfg synth_graph(int label, std::size_t index, std::size_t d, std::uint64_t seed) {
  Rng rng(mix_seed(seed, index));
  Cfg g;
  g.id = "synth-" + std::to_string(index);
  g.label = label;
  std::set<std::pair<std::size_t, std::size_t>> present;
  const auto backbone = static_cast<std::size_t>(rng.uniform_int(20, 60));
  chain_backbone(g, backbone, rng, present);
  std::size_t n = backbone;
  if (label == kMalicious) {
    const auto hubs = static_cast<std::size_t>(rng.uniform_int(1, 3));
    std::vector<std::size_t> candidates(backbone);
    for (std::size_t i = 0; i < backbone; ++i) candidates[i] = i;
    rng.shuffle(candidates);
    for (std::size_t h = 0; h < hubs; ++h) {
      const std::size_t hub = candidates[h];
      const auto leaves = static_cast<std::size_t>(rng.uniform_int(5, 10));
      for (std::size_t l = 0; l < leaves; ++l) add_edge(g, present, hub, n++);
    }
  }
  g.num_nodes = n;
  g.features = Tensor::zeros(n, d);
  const double shift = label == kMalicious ? 0.5 : -0.5;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) g.features(i, k) = rng.normal(k < 4 ? shift : 0.0, 1.0);
  }
  return g;
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.per_class < 1) throw ValidationError("synth_dataset: per_class must be >= 1");
  if (spec.feature_dim < 1) throw ValidationError("synth_dataset: feature_dim must be >= 1");
  Dataset ds;
  ds.graphs.reserve(2 * spec.per_class);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    ds.graphs.push_back(synth_graph(kBenign, 2 * i, spec.feature_dim, spec.seed));
    ds.graphs.push_back(synth_graph(kMalicious, 2 * i + 1, spec.feature_dim, spec.seed));
  }
  return ds;
}

double degree_variance(const Cfg& g) {
  const auto deg = degrees(g);
  if (deg.empty()) return 0.0;
  double mean = 0.0;
  for (auto d : deg) mean += static_cast<double>(d);
  mean /= static_cast<double>(deg.size());
  double var = 0.0;
  for (auto d : deg) var += (static_cast<double>(d) - mean) * (static_cast<double>(d) - mean);
  return var / static_cast<double>(deg.size());
}

}  // namespace cfgmoe
