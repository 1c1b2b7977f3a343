#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfgmoe/adam.hpp"
#include "cfgmoe/autodiff.hpp"
#include "cfgmoe/cfg.hpp"

namespace cfgmoe {

inline constexpr std::size_t kNumExperts = 6;
inline constexpr std::size_t kNumClasses = 2;

enum class Pooling { Mean, Std, Max };

/// Degree prior (rho: 0 uniform, 1 degree-proportional) and pooling statistic.
struct ChannelSpec {
  int rho = 0;
  Pooling pooling = Pooling::Mean;

  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// E1..E6 in order: (0,mean) (0,std) (0,max) (1,mean) (1,std) (1,max).
inline constexpr std::array<ChannelSpec, kNumExperts> kChannels = {{
    {0, Pooling::Mean},
    {0, Pooling::Std},
    {0, Pooling::Max},
    {1, Pooling::Mean},
    {1, Pooling::Std},
    {1, Pooling::Max},
}};

std::string expert_name(std::size_t expert);  // "E1".."E6"
std::string_view to_string(Pooling p);

enum class GateVariant { Uniform, Temperature, TopK };

std::string_view to_string(GateVariant v);
GateVariant parse_gate_variant(std::string_view text);

/// How the std statistic is formed from weighted messages m_j = w_j h_j.
enum class StdMode {
  /// sqrt(max(sum m*m - mu*mu, 0) + eps), mu = sum m.
  ClampedMessages,
  /// sqrt(max(sum w h*h - mu*mu, 0) + eps): the weighted variance.
  WeightedVariance,
};

std::string_view to_string(StdMode m);
StdMode parse_std_mode(std::string_view text);

struct MoeConfig {
  std::size_t input_dim = 64;
  std::size_t hidden = 64;
  std::size_t layers = 3;
  double dropout = 0.2;
  GateVariant variant = GateVariant::TopK;
  std::size_t k = 2;
  double temperature = 0.5;
  StdMode std_mode = StdMode::ClampedMessages;
  double std_epsilon = 1e-12;

  void validate() const;
  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

/// One or more graphs flattened into a block-diagonal batch, with the closed
/// neighborhoods unrolled into message lists.
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  Tensor features;                      // num_nodes x d
  std::vector<int> labels;              // per graph
  std::vector<std::size_t> node_graph;  // graph index of every node
  std::vector<std::size_t> node_offset; // first node of each graph (+ sentinel)
  std::vector<std::size_t> edge_offset; // first edge of each graph (+ sentinel)

  // Undirected pairs: the stored edges realizing each pair; a missing second
  // edge points at index num_edges.
  std::vector<std::size_t> pair_first_edge;
  std::vector<std::size_t> pair_second_edge;
  // Pair endpoints, two entries per pair, for degree accumulation.
  std::vector<std::size_t> endpoint_pair;
  std::vector<std::size_t> endpoint_node;

  // Messages j -> i over {i} U N(i): self first, then neighbors ascending.
  // msg_pair is the pair index, or pair count for the self message.
  std::vector<std::size_t> msg_dst;
  std::vector<std::size_t> msg_src;
  std::vector<std::size_t> msg_pair;

  std::size_t num_pairs() const noexcept { return pair_first_edge.size(); }
};

GraphBatch make_batch(std::span<const Cfg* const> graphs);
GraphBatch make_batch(const Cfg& g);

/// Normalized aggregation weights for both degree priors.
struct MessageWeights {
  // Messages that carry nonzero weight. Messages over fully masked edges are
  // dropped so they cannot win a max; without a mask these equal the batch lists.
  std::vector<std::size_t> msg_dst;
  std::vector<std::size_t> msg_src;
  std::array<ad::Var, 2> message;  // active messages x 1, per rho
  std::array<ad::Var, 2> readout;  // num_nodes x 1, per rho
  ad::Var degree;                  // num_nodes x 1
};

/// `mask` (num_edges x 1) scales each pair weight; a pair realized by two
/// reciprocal edges uses 1 - (1-m1)(1-m2). Degrees become mask-weighted.
/// Without a mask every edge counts fully.
MessageWeights message_weights(ad::Tape& tape, const GraphBatch& batch, std::optional<ad::Var> mask = std::nullopt);

/// Mean, std and max of weighted messages per segment.
struct PooledStats {
  ad::Var mean;
  ad::Var std;
  ad::Var max;

  ad::Var get(Pooling p) const;
};

PooledStats pool_weighted(ad::Var values, ad::Var weights, std::span<const std::size_t> segment, std::size_t n,
                          StdMode mode, double epsilon);

class MoeModel {
 public:
  MoeModel() = default;
  /// Glorot-uniform weights, zero biases.
  MoeModel(MoeConfig config, std::uint64_t seed);
  MoeModel(MoeConfig config, ParameterMap parameters);

  const MoeConfig& config() const noexcept { return config_; }
  ParameterMap& parameters() noexcept { return params_; }
  const ParameterMap& parameters() const noexcept { return params_; }

  static std::string encoder_weight(std::size_t layer);
  static std::string encoder_bias(std::size_t layer);
  static std::string expert_weight(std::size_t expert);
  static std::string expert_bias(std::size_t expert);

  /// Expected parameter shapes for a configuration.
  static std::vector<std::pair<std::string, Shape>> parameter_shapes(const MoeConfig& config);

 private:
  MoeConfig config_;
  ParameterMap params_;
};

/// Parameters placed on a tape, tracked or constant.
struct BoundParameters {
  std::vector<std::pair<std::string, ad::Var>> vars;

  ad::Var at(const std::string& name) const;
};

BoundParameters bind_parameters(ad::Tape& tape, const ParameterMap& params, bool track);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::optional<ad::Var> edge_mask;
};

struct ForwardResult {
  ad::Var logits;                                   // B x 2
  ad::Var gates;                                    // B x 6
  ad::Var router_logits;                            // B x 6
  std::array<ad::Var, kNumExperts> expert_logits;   // B x 2 each
  std::array<ad::Var, kNumExperts> readouts;        // B x hidden each
  ad::Var node_states;                              // num_nodes x hidden
};

ForwardResult forward(ad::Tape& tape, const MoeModel& model, const BoundParameters& params, const GraphBatch& batch,
                      const ForwardOptions& options = {});

/// Gate vectors from graph descriptors H_G (B x 6*hidden).
ad::Var gate(const MoeModel& model, const BoundParameters& params, ad::Var descriptor);

/// Plain-tensor view of one evaluation-mode forward pass.
struct ModelOutput {
  std::array<double, kNumClasses> logits{};
  std::array<double, kNumExperts> gates{};
  std::array<std::array<double, kNumClasses>, kNumExperts> expert_logits{};
  std::array<std::vector<double>, kNumExperts> readouts;
  int predicted = 0;
};

ModelOutput model_forward(const MoeModel& model, const Cfg& g);
std::vector<ModelOutput> model_forward(const MoeModel& model, std::span<const Cfg* const> graphs);
int predict(const MoeModel& model, const Cfg& g);

// ---- single-graph views of the building blocks --------------------------

/// Weights over the closed neighborhood of `node`: (neighbor, weight) with the
/// node itself first, then neighbors in ascending order.
std::vector<std::pair<std::size_t, double>> neighbor_weights(const Cfg& g, std::size_t node, int rho);

/// One aggregation channel over node states H (num_nodes x w), before the
/// nonlinearity.
Tensor aggregate_channel(const Tensor& H, const Cfg& g, ChannelSpec spec,
                         StdMode mode = StdMode::ClampedMessages, double epsilon = 1e-12);

/// Graph-level statistic over all nodes with globally normalized weights.
Tensor expert_readout(const Tensor& H, const Cfg& g, ChannelSpec spec, StdMode mode = StdMode::ClampedMessages,
                      double epsilon = 1e-12);

/// One encoder layer of `model` applied to H in evaluation mode.
Tensor layer_forward(const MoeModel& model, std::size_t layer, const Tensor& H, const Cfg& g);

}  // namespace cfgmoe
