#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/csv.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/graph_io.hpp"
#include "support/dense_oracle.hpp"
#include "support/fixtures.hpp"

namespace cfgmoe {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cfgmoe_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

double variance_of(const std::vector<std::size_t>& d) {
  double mean = 0.0, var = 0.0;
  for (auto x : d) mean += static_cast<double>(x);
  mean /= static_cast<double>(d.size());
  for (auto x : d) var += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean);
  return var / static_cast<double>(d.size());
}

TEST(Degrees, PathIsolatedAndStar) {
  EXPECT_EQ(degrees(testing::path_graph(3, 1)), (std::vector<std::size_t>{1, 2, 1}));
  Cfg lone;
  lone.num_nodes = 1;
  lone.features = Tensor::zeros(1, 1);
  EXPECT_EQ(degrees(lone), (std::vector<std::size_t>{0}));
  EXPECT_EQ(degrees(testing::star_graph(3, 1)), (std::vector<std::size_t>{3, 1, 1, 1}));
}

TEST(Degrees, ReciprocalEdgesCountOnce) {
  Cfg g = testing::path_graph(3, 1);
  g.edges.push_back({1, 0});
  EXPECT_EQ(degrees(g), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(undirected_view(g).pairs.size(), 2u);
}

TEST(Degrees, MatchDenseAdjacencyAndIgnoreDirection) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Cfg g = testing::random_graph(static_cast<std::size_t>(rng.uniform_int(1, 12)), 0.3, 2, rng);
    const auto d = degrees(g);
    EXPECT_EQ(d, testing::dense_degrees(g));
    Cfg flipped = g;
    for (auto& e : flipped.edges) std::swap(e.src, e.dst);
    EXPECT_EQ(degrees(flipped), d);
  }
}

TEST(CfgValidation, RejectsBadGraphs) {
  Cfg g = testing::path_graph(3, 2);
  EXPECT_NO_THROW(g.validate());
  Cfg self = g;
  self.edges.push_back({1, 1});
  EXPECT_THROW(self.validate(), ValidationError);
  Cfg dup = g;
  dup.edges.push_back({0, 1});
  EXPECT_THROW(dup.validate(), ValidationError);
  Cfg rows = g;
  rows.features = Tensor::zeros(2, 2);
  EXPECT_THROW(rows.validate(), ValidationError);
  Cfg label = g;
  label.label = 2;
  EXPECT_THROW(label.validate(), ValidationError);
}

TEST(GraphIo, MinimalFileParses) {
  const Cfg g = parse_graph(R"({"id": "g0", "label": 1, "num_nodes": 1, "edges": [], "features": [[0.5, -2]]})");
  EXPECT_EQ(g.num_nodes, 1u);
  EXPECT_EQ(g.label, 1);
  EXPECT_EQ(g.features, Tensor::from_rows({{0.5, -2}}));
}

TEST(GraphIo, ErrorsNameTheProblem) {
  try {
    parse_graph(R"({"id": "g", "label": 0, "num_nodes": 2, "edges": [[0, 1], [1, 2]], "features": [[0], [0]]})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 1"), std::string::npos) << e.what();
  }
  try {
    parse_graph("{\n\"id\": \"g\",\n\"label\": 0,\n \"num_nodes\" 2}");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_graph(R"({"id": "g", "label": 0, "num_nodes": 2, "edges": [], "features": [[0], [0, 1]]})"),
               ValidationError);
  EXPECT_THROW(parse_graph(R"({"id": "g", "label": 0, "num_nodes": 3, "edges": [], "features": [[0], [0]]})"),
               ValidationError);
  EXPECT_THROW(parse_graph(R"({"id": "g", "num_nodes": 1, "edges": [], "features": [[0]]})"), ValidationError);
}

TEST(GraphIo, SaveLoadRoundTripIsIdentity) {
  TempDir dir("graph_io");
  Rng rng(50);
  for (int trial = 0; trial < 5; ++trial) {
    Cfg g = testing::random_graph(50, 0.08, 7, rng, trial % 2);
    g.id = "random-" + std::to_string(trial);
    for (auto& v : g.features.values()) v = rng.normal() * 1e3;
    save_graph(g, dir.path / "g.json");
    EXPECT_EQ(load_graph(dir.path / "g.json"), g);
  }
}

TEST(GraphIo, DatasetRoundTrip) {
  TempDir dir("dataset_io");
  const Dataset ds = synth_dataset({.per_class = 3, .feature_dim = 5, .seed = 1});
  const auto manifest = save_dataset(ds, dir.path / "ds");
  const Dataset back = load_dataset(manifest);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.graphs[i], ds.graphs[i]);
}

TEST(Synth, DeterministicAndBalanced) {
  const SynthSpec spec{.per_class = 10, .feature_dim = 8, .seed = 123};
  const Dataset a = synth_dataset(spec);
  const Dataset b = synth_dataset(spec);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(format_graph(a.graphs[i]), format_graph(b.graphs[i]));
  EXPECT_EQ(a.class_counts(), (std::array<std::size_t, 2>{10, 10}));
  const Dataset c = synth_dataset({.per_class = 10, .feature_dim = 8, .seed = 124});
  EXPECT_NE(format_graph(a.graphs[0]), format_graph(c.graphs[0]));
  for (const auto& g : a.graphs) EXPECT_NO_THROW(g.validate());
}

TEST(Synth, GraphShapesFollowClassTemplates) {
  const Dataset ds = synth_dataset({.per_class = 50, .feature_dim = 6, .seed = 9});
  for (const auto& g : ds.graphs) {
    EXPECT_EQ(g.feature_dim(), 6u);
    if (g.label == kBenign) {
      EXPECT_GE(g.num_nodes, 20u);
      EXPECT_LE(g.num_nodes, 60u);
    }
  }
}

TEST(Synth, HubClassHasHigherDegreeVariance) {
  const Dataset ds = synth_dataset({.per_class = 100, .feature_dim = 4, .seed = 2});
  double var[2] = {0, 0};
  for (const auto& g : ds.graphs) {
    const double v = variance_of(testing::dense_degrees(g));
    EXPECT_NEAR(degree_variance(g), v, 1e-12);
    var[g.label] += v / 100.0;
  }
  EXPECT_GT(var[1], var[0]);
}

TEST(Synth, DegreeVarianceThresholdSeparatesClasses) {
  const Dataset ds = synth_dataset({.per_class = 200, .feature_dim = 4, .seed = 17});
  std::vector<std::pair<double, int>> scored;
  for (const auto& g : ds.graphs) scored.emplace_back(variance_of(testing::dense_degrees(g)), g.label);
  std::sort(scored.begin(), scored.end());
  // Best threshold "predict 1 above t" over all cut points.
  std::size_t ones_total = 0;
  for (auto& s : scored) ones_total += static_cast<std::size_t>(s.second);
  std::size_t best = 0, zeros_below = 0, ones_below = 0;
  for (std::size_t cut = 0; cut <= scored.size(); ++cut) {
    best = std::max(best, zeros_below + (ones_total - ones_below));
    if (cut < scored.size()) (scored[cut].second ? ones_below : zeros_below)++;
  }
  EXPECT_GE(static_cast<double>(best) / static_cast<double>(scored.size()), 0.9);
}

TEST(Split, ExactProportionsForTenPlusTen) {
  const Dataset ds = synth_dataset({.per_class = 10, .feature_dim = 2, .seed = 0});
  const auto split = stratified_split(ds, {.train_fraction = 0.8, .seed = 4});
  std::array<int, 2> train{}, test{};
  for (auto i : split.train) train[ds.graphs[i].label]++;
  for (auto i : split.test) test[ds.graphs[i].label]++;
  EXPECT_EQ(train, (std::array<int, 2>{8, 8}));
  EXPECT_EQ(test, (std::array<int, 2>{2, 2}));
}

TEST(Split, DisjointCoveringProportionalAndDeterministic) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Dataset ds;
    const auto n0 = rng.uniform_int(2, 30), n1 = rng.uniform_int(2, 30);
    for (int i = 0; i < n0 + n1; ++i) {
      Cfg g = testing::path_graph(2, 1);
      g.label = i < n0 ? 0 : 1;
      ds.graphs.push_back(g);
    }
    rng.shuffle(ds.graphs);
    const double frac = rng.uniform(0.1, 0.9);
    const SplitSpec spec{.train_fraction = frac, .seed = rng.next()};
    const auto split = stratified_split(ds, spec);
    std::set<std::size_t> tr(split.train.begin(), split.train.end()), te(split.test.begin(), split.test.end());
    EXPECT_EQ(tr.size(), split.train.size());
    for (auto i : te) EXPECT_FALSE(tr.count(i));
    EXPECT_EQ(tr.size() + te.size(), ds.size());
    for (int c = 0; c < 2; ++c) {
      double in_train = 0;
      for (auto i : split.train) in_train += ds.graphs[i].label == c;
      const double members = c == 0 ? static_cast<double>(n0) : static_cast<double>(n1);
      EXPECT_LE(std::abs(in_train - frac * members), 1.0);
    }
    const auto again = stratified_split(ds, spec);
    EXPECT_EQ(again.train, split.train);
    EXPECT_EQ(again.test, split.test);
  }
}

TEST(Split, RejectsTinyClassAndBadFraction) {
  Dataset ds;
  for (int i = 0; i < 5; ++i) {
    Cfg g = testing::path_graph(2, 1);
    g.label = i == 0 ? 1 : 0;
    ds.graphs.push_back(g);
  }
  EXPECT_THROW(stratified_split(ds, {}), ValidationError);
  ds.graphs.push_back(ds.graphs[0]);
  EXPECT_NO_THROW(stratified_split(ds, {}));
  EXPECT_THROW(stratified_split(ds, {.train_fraction = 1.0}), ValidationError);
  EXPECT_THROW(stratified_split(ds, {.train_fraction = 0.0}), ValidationError);
}

TEST(WithEdges, KeepsSelectedEdgesOnly) {
  const Cfg g = testing::star_graph(4, 2);
  const std::vector<std::size_t> keep = {1, 3};
  const Cfg h = with_edges(g, keep);
  ASSERT_EQ(h.edges.size(), 2u);
  EXPECT_EQ(h.edges[0], g.edges[1]);
  EXPECT_EQ(h.edges[1], g.edges[3]);
  EXPECT_EQ(h.features, g.features);
}

TEST(Csv, MatrixRoundTripIsExact) {
  TempDir dir("csv");
  Rng rng(1);
  Tensor m = Tensor::zeros(7, 5);
  for (auto& v : m.values()) v = rng.normal() * 1e-7 + rng.uniform(-1e6, 1e6);
  write_matrix_csv(dir.path / "m.csv", m);
  EXPECT_EQ(read_matrix_csv(dir.path / "m.csv"), m);
}

}  // namespace
}  // namespace cfgmoe
