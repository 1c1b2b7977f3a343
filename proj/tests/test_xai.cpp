#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"
#include "cfgmoe/training.hpp"
#include "cfgmoe/xai.hpp"
#include "support/fixtures.hpp"

namespace cfgmoe {
namespace {

using testing::small_config;

const double kLog6 = std::log(6.0);

TEST(KeptEdgeCount, ExamplesAndExactGrid) {
  EXPECT_EQ(kept_edge_count(3, 0.34), 2u);
  EXPECT_EQ(kept_edge_count(7, 0.0), 7u);
  EXPECT_EQ(kept_edge_count(7, 1.0), 0u);
  EXPECT_EQ(kept_edge_count(0, 0.5), 0u);
  // s = i/20 exactly: ceil((20 - i) E / 20) in integers.
  for (std::size_t edges = 0; edges <= 60; ++edges) {
    for (std::size_t i = 0; i <= 20; ++i) {
      const std::size_t want = ((20 - i) * edges + 19) / 20;
      EXPECT_EQ(kept_edge_count(edges, static_cast<double>(i) / 20.0), want) << edges << " " << i;
    }
  }
  EXPECT_THROW(kept_edge_count(3, -0.1), ValidationError);
  EXPECT_THROW(kept_edge_count(3, 1.5), ValidationError);
}

TEST(SelectSubgraph, ExamplesAndTies) {
  const std::vector<double> scores = {3, 1, 2};
  EXPECT_EQ(select_subgraph(scores, 0.34), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_subgraph(scores, 0.0), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(select_subgraph(scores, 1.0).empty());
  const std::vector<double> flat = {1, 1, 1, 1};
  EXPECT_EQ(select_subgraph(flat, 0.5), (std::vector<std::size_t>{0, 1}));
}

TEST(SelectSubgraph, KeepsTheHighestScores) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(rng.uniform_int(0, 25)));
    for (auto& v : s) v = std::round(rng.normal() * 3.0);  // plenty of ties
    const double sparsity = rng.uniform();
    const auto kept = select_subgraph(s, sparsity);
    EXPECT_EQ(kept.size(), kept_edge_count(s.size(), sparsity));
    EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
    std::vector<char> in(s.size(), 0);
    for (auto e : kept) in[e] = 1;
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = 0; b < s.size(); ++b)
        if (in[a] && !in[b]) EXPECT_TRUE(s[a] > s[b] || (s[a] == s[b] && a < b));
  }
}

struct FidelityFixture {
  MoeModel model;
  Dataset ds;
  std::vector<EdgeAttribution> attrs;
};

FidelityFixture fidelity_fixture() {
  FidelityFixture f{MoeModel(small_config(GateVariant::TopK), 3), {}, {}};
  testing::randomize_biases(f.model, 4);
  Rng rng(5);
  for (int i = 0; i < 30; ++i) {
    f.ds.graphs.push_back(testing::random_graph(static_cast<std::size_t>(rng.uniform_int(2, 9)), 0.4, 3, rng));
    EdgeAttribution a;
    a.scores.resize(f.ds.graphs.back().edges.size());
    for (auto& v : a.scores) v = rng.normal();
    f.attrs.push_back(a);
  }
  return f;
}

TEST(Fidelity, BoundaryIdentitiesAreExact) {
  const auto f = fidelity_fixture();
  EXPECT_EQ(fidelity(f.model, f.ds, f.attrs, 0.0).minus, 0.0);
  EXPECT_EQ(fidelity(f.model, f.ds, f.attrs, 1.0).plus, 0.0);
  for (double s : default_sparsity_grid()) {
    const auto p = fidelity(f.model, f.ds, f.attrs, s);
    EXPECT_GE(p.plus, 0.0);
    EXPECT_LE(p.plus, 1.0);
    EXPECT_GE(p.minus, 0.0);
    EXPECT_LE(p.minus, 1.0);
  }
}

TEST(Fidelity, MatchesIndicatorCount) {
  const auto f = fidelity_fixture();
  for (double s : {0.2, 0.5, 0.8}) {
    double plus = 0.0, minus = 0.0;
    for (std::size_t i = 0; i < f.ds.size(); ++i) {
      const Cfg& g = f.ds.graphs[i];
      // Rank by (score desc, index asc) without the library helper.
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t e = 0; e < g.edges.size(); ++e) ranked.emplace_back(-f.attrs[i].scores[e], e);
      std::sort(ranked.begin(), ranked.end());
      const auto keep_n = static_cast<std::size_t>(std::ceil((1.0 - s) * static_cast<double>(g.edges.size()) - 1e-9));
      Cfg kept = g, rest = g;
      kept.edges.clear();
      rest.edges.clear();
      std::vector<char> in(g.edges.size(), 0);
      for (std::size_t r = 0; r < keep_n; ++r) in[ranked[r].second] = 1;
      for (std::size_t e = 0; e < g.edges.size(); ++e) (in[e] ? kept : rest).edges.push_back(g.edges[e]);
      const int y = predict(f.model, g);
      plus += predict(f.model, rest) != y;
      minus += predict(f.model, kept) != y;
    }
    const auto p = fidelity(f.model, f.ds, f.attrs, s);
    EXPECT_DOUBLE_EQ(p.plus, plus / static_cast<double>(f.ds.size()));
    EXPECT_DOUBLE_EQ(p.minus, minus / static_cast<double>(f.ds.size()));
  }
}

TEST(Fidelity, OneFlipInTwoGivesOneHalf) {
  // A briefly trained model reads structure, so deleting every edge changes
  // some predictions but not others.
  const Dataset pool = synth_dataset({.per_class = 20, .feature_dim = 4, .seed = 5});
  TrainConfig c;
  c.epochs = 30;
  c.learning_rate = 3e-3;
  c.seed = 1;
  c.model = small_config(GateVariant::TopK, 4, 8, 2);
  const MoeModel model = train(pool, c).model;
  std::optional<Cfg> flips, stays;
  for (const auto& g : pool.graphs) {
    const bool changed = predict(model, g) != predict(model, with_edges(g, {}));
    if (changed && !flips) flips = g;
    if (!changed && !stays) stays = g;
  }
  ASSERT_TRUE(flips && stays);
  const Dataset two{{*flips, *stays}};
  std::vector<EdgeAttribution> attrs(2);
  attrs[0].scores.assign(flips->edges.size(), 1.0);
  attrs[1].scores.assign(stays->edges.size(), 1.0);
  EXPECT_EQ(fidelity(model, two, attrs, 0.0).plus, 0.5);
  EXPECT_EQ(fidelity(model, two, attrs, 1.0).minus, 0.5);
}

TEST(Fidelity, RejectsEmptyAndMismatched) {
  const auto f = fidelity_fixture();
  EXPECT_THROW(fidelity(f.model, Dataset{}, {}, 0.5), ValidationError);
  EXPECT_THROW(fidelity(f.model, f.ds, std::span(f.attrs).first(3), 0.5), ValidationError);
}

TEST(Characterization, ExamplesAndGridOracle) {
  EXPECT_EQ(characterization(1.0, 0.0), 1.0);
  EXPECT_EQ(characterization(0.0, 0.4), 0.0);
  EXPECT_EQ(characterization(0.0, 1.0), 0.0);
  EXPECT_NEAR(characterization(0.8, 0.3), 0.56 / 0.75, 1e-15);
  EXPECT_THROW(characterization(0.5, 0.5, 0.6, 0.6), ValidationError);
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j <= 20; ++j) {
      const double fp = i / 20.0, fm = j / 20.0;
      // Reciprocal form of the weighted harmonic mean of F+ and 1 - F-.
      const double want = fp > 0.0 && fm < 1.0 ? 1.0 / (0.5 / fp + 0.5 / (1.0 - fm)) : 0.0;
      const double got = characterization(fp, fm);
      EXPECT_NEAR(got, want, 1e-12);
      EXPECT_GE(got, 0.0);
      EXPECT_LE(got, 1.0);
      if (i > 0) EXPECT_GE(got, characterization((i - 1) / 20.0, fm));
      if (j > 0) EXPECT_LE(got, characterization(fp, (j - 1) / 20.0));
    }
  }
}

TEST(RouterEntropy, ReferenceValues) {
  const std::array<double, 6> one_hot = {0, 0, 0, 1, 0, 0};
  const std::array<double, 6> uniform = {1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6, 1. / 6};
  const std::array<double, 6> two = {0.5, 0.5, 0, 0, 0, 0};
  EXPECT_EQ(router_entropy(one_hot), 0.0);
  EXPECT_NEAR(router_entropy(uniform), 1.0, 1e-15);
  EXPECT_NEAR(router_entropy(two), std::log(2.0) / kLog6, 1e-12);
  for (std::size_t k = 1; k <= 6; ++k) {
    std::array<double, 6> g{};
    for (std::size_t e = 0; e < k; ++e) g[e] = 1.0 / static_cast<double>(k);
    EXPECT_NEAR(router_entropy(g), reference_entropy(k), 1e-12);
  }
  const std::vector<double> wrong = {1.0};
  EXPECT_THROW(router_entropy(wrong), ValidationError);
}

TEST(RouterEntropy, BoundedOnRandomGates) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<double, 6> g{};
    double total = 0.0;
    for (auto& v : g) total += v = rng.bernoulli(0.3) ? 0.0 : rng.uniform();
    if (total == 0.0) continue;
    for (auto& v : g) v /= total;
    const double h = router_entropy(g);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0 + 1e-12);
  }
}

TEST(EntropyEcdf, ExamplesAndShape) {
  const std::vector<double> single = {0.3};
  const auto a = entropy_ecdf(single);
  EXPECT_EQ(a.values, single);
  EXPECT_EQ(a.fraction, (std::vector<double>{1.0}));
  EXPECT_EQ(a.q25, 0.3);
  EXPECT_EQ(a.median, 0.3);
  EXPECT_EQ(a.q75, 0.3);
  const std::vector<double> ends = {1.0, 0.0};
  EXPECT_EQ(entropy_ecdf(ends).median, 0.5);
  const std::vector<double> ties = {0.5, 0.2, 0.2};
  const auto t = entropy_ecdf(ties);
  EXPECT_EQ(t.values, (std::vector<double>{0.2, 0.5}));
  EXPECT_NEAR(t.fraction[0], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(t.fraction[1], 1.0);
  EXPECT_NEAR(t.reference[0], std::log(2.0) / kLog6, 1e-15);
  EXPECT_NEAR(t.reference[2], std::log(4.0) / kLog6, 1e-15);
  EXPECT_THROW(entropy_ecdf({}), ValidationError);

  Rng rng(3);
  std::vector<double> v(57);
  for (auto& x : v) x = std::round(rng.uniform() * 20.0) / 20.0;
  const auto e = entropy_ecdf(v);
  EXPECT_TRUE(std::is_sorted(e.values.begin(), e.values.end()));
  EXPECT_TRUE(std::is_sorted(e.fraction.begin(), e.fraction.end()));
  EXPECT_EQ(e.fraction.back(), 1.0);
  for (std::size_t i = 0; i < e.values.size(); ++i) {
    const auto at_most = std::count_if(v.begin(), v.end(), [&](double x) { return x <= e.values[i]; });
    EXPECT_NEAR(e.fraction[i], static_cast<double>(at_most) / 57.0, 1e-15);
  }
  // Closest-rank interpolation: position q (n - 1).
  std::sort(v.begin(), v.end());
  EXPECT_EQ(e.median, v[28]);
  EXPECT_NEAR(e.q25, v[14], 1e-15);
  EXPECT_NEAR(e.q75, v[42], 1e-15);
}

TEST(Coselection, ExamplesTiesAndTotals) {
  const std::vector<std::array<double, 6>> gates = {
      {0, 0, 0, 0.7, 0, 0.3},  // E4 over E6
      {0, 0.5, 0.5, 0, 0, 0},  // tie: E2 is top-1
      {0, 0, 0, 0.6, 0, 0.4},
  };
  const auto m = coselection_matrix(gates);
  EXPECT_EQ(m[3][5], 2u);
  EXPECT_EQ(m[1][2], 1u);
  std::size_t total = 0;
  for (std::size_t a = 0; a < 6; ++a) {
    EXPECT_EQ(m[a][a], 0u);
    for (auto c : m[a]) total += c;
  }
  EXPECT_EQ(total, 3u);
  EXPECT_NEAR(coselection_entropy(m), -(2.0 / 3.0) * std::log(2.0 / 3.0) - (1.0 / 3.0) * std::log(1.0 / 3.0), 1e-15);
  const std::vector<std::array<double, 6>> three = {{0.2, 0.3, 0.5, 0, 0, 0}};
  EXPECT_THROW(coselection_matrix(three), ValidationError);
  EXPECT_EQ(coselection_entropy(CoselectionMatrix{}), 0.0);
}

TEST(GateBoxes, CountsAndQuartiles) {
  const std::vector<std::array<double, 6>> gates = {
      {0.6, 0.4, 0, 0, 0, 0},
      {0.8, 0, 0.2, 0, 0, 0},
      {0.3, 0.7, 0, 0, 0, 0},
  };
  const auto boxes = gate_boxes(gates);
  ASSERT_EQ(boxes.size(), 18u);
  const auto find = [&](std::size_t e, const std::string& role) {
    return *std::find_if(boxes.begin(), boxes.end(), [&](const GateBox& b) { return b.expert == e && b.role == role; });
  };
  const GateBox e1 = find(0, "all");
  EXPECT_EQ(e1.count, 3u);
  EXPECT_EQ(e1.median, 0.6);
  EXPECT_NEAR(e1.mean, 1.7 / 3.0, 1e-15);
  EXPECT_EQ(find(0, "top1").count, 2u);
  EXPECT_EQ(find(0, "top2").count, 1u);
  EXPECT_EQ(find(1, "top1").max, 0.7);
  EXPECT_EQ(find(5, "top1").count, 0u);
}

TEST(XaiEval, ProducesBoundedDeterministicTables) {
  MoeModel m(small_config(GateVariant::TopK), 6);
  testing::randomize_biases(m, 7);
  Dataset ds;
  Rng rng(8);
  for (int i = 0; i < 8; ++i) ds.graphs.push_back(testing::random_graph(6, 0.4, 3, rng, i % 2));
  XaiEvalOptions opt;
  opt.explain.ig.steps = 4;
  opt.sparsity = default_sparsity_grid();
  opt.threads = 1;
  const auto a = run_xai_eval(m, ds, opt);
  opt.threads = 3;
  const auto b = run_xai_eval(m, ds, opt);
  ASSERT_EQ(a.fidelity.size(), 19u);
  for (std::size_t l = 0; l < 19; ++l) {
    EXPECT_EQ(a.fidelity[l].fidelity.plus, b.fidelity[l].fidelity.plus);
    EXPECT_EQ(a.fidelity[l].fidelity.minus, b.fidelity[l].fidelity.minus);
    EXPECT_GE(a.fidelity[l].characterization, 0.0);
    EXPECT_LE(a.fidelity[l].characterization, 1.0);
  }
  EXPECT_EQ(fidelity_table(a.fidelity, "top2").str(), fidelity_table(b.fidelity, "top2").str());
  ASSERT_TRUE(a.coselection.has_value());
  EXPECT_EQ(*a.coselection, *b.coselection);
  EXPECT_EQ(a.entropies.size(), 8u);
  EXPECT_EQ(ecdf_table(a.ecdf).str(), ecdf_table(b.ecdf).str());
  EXPECT_EQ(gate_box_table(a.boxes).str(), gate_box_table(b.boxes).str());
  EXPECT_EQ(coselection_table(*a.coselection).str().substr(0, 9), "top1,E1,E");

  MoeModel u(small_config(GateVariant::Uniform), 6);
  EXPECT_FALSE(run_xai_eval(u, ds, opt).coselection.has_value());
  opt.sparsity = {1.5};
  EXPECT_THROW(run_xai_eval(m, ds, opt), ValidationError);
}

}  // namespace
}  // namespace cfgmoe
