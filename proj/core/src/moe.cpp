#include "cfgmoe/moe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(fan_in, fan_out);
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

std::string expert_name(std::size_t expert) { return "E" + std::to_string(expert + 1); }

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::Mean: return "mean";
    case Pooling::Std: return "std";
    case Pooling::Max: return "max";
  }
  return "?";
}

std::string_view to_string(GateVariant v) {
  switch (v) {
    case GateVariant::Uniform: return "uniform";
    case GateVariant::Temperature: return "temperature";
    case GateVariant::TopK: return "topk";
  }
  return "?";
}

GateVariant parse_gate_variant(std::string_view text) {
  const auto t = lower(text);
  if (t == "uniform") return GateVariant::Uniform;
  if (t == "temperature" || t == "softmax") return GateVariant::Temperature;
  if (t == "topk" || t == "top-k") return GateVariant::TopK;
  throw ValidationError("unknown gate variant '" + std::string(text) + "' (expected uniform, temperature or topk)");
}

std::string_view to_string(StdMode m) {
  return m == StdMode::ClampedMessages ? "clamped" : "variance";
}

StdMode parse_std_mode(std::string_view text) {
  const auto t = lower(text);
  if (t == "clamped") return StdMode::ClampedMessages;
  if (t == "variance") return StdMode::WeightedVariance;
  throw ValidationError("unknown std mode '" + std::string(text) + "' (expected clamped or variance)");
}

void MoeConfig::validate() const {
  if (input_dim == 0) throw ValidationError("model: input_dim must be positive");
  if (hidden == 0) throw ValidationError("model: hidden must be positive");
  if (layers == 0) throw ValidationError("model: layers must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model: dropout must lie in [0, 1)");
  if (variant == GateVariant::TopK && (k < 1 || k > kNumExperts)) {
    throw ValidationError("model: k must lie in [1, 6], got " + std::to_string(k));
  }
  if (variant == GateVariant::Temperature && !(temperature > 0.0)) {
    throw ValidationError("model: temperature must be positive");
  }
  if (!(std_epsilon > 0.0)) throw ValidationError("model: std_epsilon must be positive");
}

// ---- batching ---------------------------------------------------------------

GraphBatch make_batch(std::span<const Cfg* const> graphs) {
  if (graphs.empty()) throw ValidationError("make_batch: no graphs");
  GraphBatch b;
  b.num_graphs = graphs.size();
  const std::size_t d = graphs.front()->feature_dim();
  for (const Cfg* g : graphs) {
    if (g->num_nodes == 0) throw ValidationError("graph '" + g->id + "' has no nodes");
    if (g->feature_dim() != d) {
      throw ShapeError("graph '" + g->id + "' has feature dimension " + std::to_string(g->feature_dim()) +
                       ", batch expects " + std::to_string(d));
    }
    b.num_nodes += g->num_nodes;
    b.num_edges += g->edges.size();
  }

  std::vector<double> feats;
  feats.reserve(b.num_nodes * d);
  std::size_t node_base = 0;
  std::size_t edge_base = 0;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency(b.num_nodes);  // (neighbor, pair)
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Cfg& g = *graphs[gi];
    b.labels.push_back(g.label);
    b.node_offset.push_back(node_base);
    b.edge_offset.push_back(edge_base);
    feats.insert(feats.end(), g.features.values().begin(), g.features.values().end());
    b.node_graph.insert(b.node_graph.end(), g.num_nodes, gi);
    for (const auto& p : undirected_view(g).pairs) {
      const std::size_t pair = b.num_pairs();
      b.pair_first_edge.push_back(edge_base + p.edges[0]);
      b.pair_second_edge.push_back(p.edge_count > 1 ? edge_base + p.edges[1] : b.num_edges);
      b.endpoint_pair.insert(b.endpoint_pair.end(), {pair, pair});
      b.endpoint_node.insert(b.endpoint_node.end(), {node_base + p.a, node_base + p.b});
      adjacency[node_base + p.a].emplace_back(node_base + p.b, pair);
      adjacency[node_base + p.b].emplace_back(node_base + p.a, pair);
    }
    node_base += g.num_nodes;
    edge_base += g.edges.size();
  }
  b.node_offset.push_back(node_base);
  b.edge_offset.push_back(edge_base);
  b.features = Tensor(Shape{b.num_nodes, d}, std::move(feats));

  const std::size_t self = b.num_pairs();
  for (std::size_t i = 0; i < b.num_nodes; ++i) {
    auto& nbrs = adjacency[i];
    std::sort(nbrs.begin(), nbrs.end());
    b.msg_dst.push_back(i);
    b.msg_src.push_back(i);
    b.msg_pair.push_back(self);
    for (const auto& [j, pair] : nbrs) {
      b.msg_dst.push_back(i);
      b.msg_src.push_back(j);
      b.msg_pair.push_back(pair);
    }
  }
  return b;
}

GraphBatch make_batch(const Cfg& g) {
  const Cfg* one[] = {&g};
  return make_batch(one);
}

// ---- weights and pooling ----------------------------------------------------

MessageWeights message_weights(ad::Tape& tape, const GraphBatch& b, std::optional<ad::Var> mask) {
  const ad::Var m = mask ? *mask : tape.constant(Tensor::full(b.num_edges, 1, 1.0));
  if (m.value().rows() != b.num_edges || m.value().cols() != 1) {
    throw ShapeError("edge mask has shape " + shape_string(m.value().shape()) + ", expected " +
                     std::to_string(b.num_edges) + "x1");
  }
  const ad::Var one = tape.constant(Tensor::full(1, 1, 1.0));

  // keep[e] = 1 - m[e], with a trailing 1 standing in for a missing reciprocal edge.
  const ad::Var keep_parts[] = {ad::add_scalar(ad::scale(m, -1.0), 1.0), one};
  const ad::Var keep = ad::concat_rows(keep_parts);
  const ad::Var pair_mask = ad::add_scalar(
      ad::scale(ad::mul(ad::gather_rows(keep, b.pair_first_edge), ad::gather_rows(keep, b.pair_second_edge)), -1.0),
      1.0);
  const ad::Var pair_parts[] = {pair_mask, one};
  const ad::Var coupling = ad::gather_rows(ad::concat_rows(pair_parts), b.msg_pair);

  MessageWeights w;
  w.degree = ad::segment_sum(ad::gather_rows(pair_mask, b.endpoint_pair), b.endpoint_node, b.num_nodes);
  w.message[0] = ad::segment_normalize(coupling, coupling, b.msg_dst, b.num_nodes);
  const ad::Var degree_weighted = ad::mul(coupling, ad::gather_rows(w.degree, b.msg_src));
  w.message[1] = ad::segment_normalize(degree_weighted, coupling, b.msg_dst, b.num_nodes);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < b.msg_dst.size(); ++k) {
    if (coupling.value()[k] != 0.0) active.push_back(k);
  }
  if (active.size() == b.msg_dst.size()) {
    w.msg_dst = b.msg_dst;
    w.msg_src = b.msg_src;
  } else {
    for (std::size_t k : active) {
      w.msg_dst.push_back(b.msg_dst[k]);
      w.msg_src.push_back(b.msg_src[k]);
    }
    for (auto& m : w.message) m = ad::gather_rows(m, active);
  }

  const ad::Var ones = tape.constant(Tensor::full(b.num_nodes, 1, 1.0));
  w.readout[0] = ad::segment_normalize(ones, ones, b.node_graph, b.num_graphs);
  // A fully masked graph takes the limit of mask -> 0 along a uniform scaling:
  // a pair then weighs as many units as it has stored edges (1 - (1-a)^2 ~ 2a).
  // Graphs without edges fall back to uniform weights.
  Tensor prior = Tensor::zeros(b.num_nodes, 1);
  for (std::size_t k = 0; k < b.endpoint_node.size(); ++k) {
    const std::size_t pair = b.endpoint_pair[k];
    prior[b.endpoint_node[k]] += b.pair_second_edge[pair] < b.num_edges ? 2.0 : 1.0;
  }
  for (std::size_t gi = 0; gi < b.num_graphs; ++gi) {
    if (b.edge_offset[gi] == b.edge_offset[gi + 1]) {
      for (std::size_t i = b.node_offset[gi]; i < b.node_offset[gi + 1]; ++i) prior[i] = 1.0;
    }
  }
  w.readout[1] = ad::segment_normalize(w.degree, tape.constant(std::move(prior)), b.node_graph, b.num_graphs);
  return w;
}

ad::Var PooledStats::get(Pooling p) const {
  switch (p) {
    case Pooling::Mean: return mean;
    case Pooling::Std: return std;
    case Pooling::Max: return max;
  }
  return mean;
}

PooledStats pool_weighted(ad::Var values, ad::Var weights, std::span<const std::size_t> segment, std::size_t n,
                          StdMode mode, double epsilon) {
  PooledStats s;
  const ad::Var messages = ad::mul_col(values, weights);
  s.mean = ad::segment_sum(messages, segment, n);
  s.max = ad::segment_max(messages, segment, n);
  const ad::Var second = mode == StdMode::ClampedMessages
                             ? ad::segment_sum(ad::mul(messages, messages), segment, n)
                             : ad::segment_sum(ad::mul_col(ad::mul(values, values), weights), segment, n);
  s.std = ad::sqrt(ad::add_scalar(ad::relu(ad::sub(second, ad::mul(s.mean, s.mean))), epsilon));
  return s;
}

// ---- parameters -------------------------------------------------------------

std::string MoeModel::encoder_weight(std::size_t layer) { return "encoder." + std::to_string(layer) + ".weight"; }
std::string MoeModel::encoder_bias(std::size_t layer) { return "encoder." + std::to_string(layer) + ".bias"; }
std::string MoeModel::expert_weight(std::size_t expert) { return "expert." + std::to_string(expert) + ".weight"; }
std::string MoeModel::expert_bias(std::size_t expert) { return "expert." + std::to_string(expert) + ".bias"; }

std::vector<std::pair<std::string, Shape>> MoeModel::parameter_shapes(const MoeConfig& c) {
  std::vector<std::pair<std::string, Shape>> shapes;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t width = l == 0 ? c.input_dim : c.hidden;
    shapes.emplace_back(encoder_weight(l), Shape{kNumExperts * width, c.hidden});
    shapes.emplace_back(encoder_bias(l), Shape{1, c.hidden});
  }
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    shapes.emplace_back(expert_weight(e), Shape{c.hidden, kNumClasses});
    shapes.emplace_back(expert_bias(e), Shape{1, kNumClasses});
  }
  shapes.emplace_back("gate.hidden.weight", Shape{kNumExperts * c.hidden, c.hidden});
  shapes.emplace_back("gate.hidden.bias", Shape{1, c.hidden});
  shapes.emplace_back("gate.out.weight", Shape{c.hidden, kNumExperts});
  shapes.emplace_back("gate.out.bias", Shape{1, kNumExperts});
  return shapes;
}

MoeModel::MoeModel(MoeConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (const auto& [name, shape] : parameter_shapes(config_)) {
    const bool bias = name.ends_with(".bias");
    params_[name] = bias ? Tensor(shape, 0.0) : glorot(shape[0], shape[1], rng);
  }
}

MoeModel::MoeModel(MoeConfig config, ParameterMap parameters) : config_(config), params_(std::move(parameters)) {
  config_.validate();
  const auto shapes = parameter_shapes(config_);
  if (params_.size() != shapes.size()) {
    throw ValidationError("model: expected " + std::to_string(shapes.size()) + " parameter tensors, got " +
                          std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("model: missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("model: parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                       ", expected " + shape_string(shape));
    }
    if (!it->second.all_finite()) throw ValidationError("model: parameter '" + name + "' is not finite");
  }
}

ad::Var BoundParameters::at(const std::string& name) const {
  for (const auto& [n, v] : vars) {
    if (n == name) return v;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

BoundParameters bind_parameters(ad::Tape& tape, const ParameterMap& params, bool track) {
  BoundParameters b;
  b.vars.reserve(params.size());
  for (const auto& [name, value] : params) b.vars.emplace_back(name, track ? tape.variable(value) : tape.constant(value));
  return b;
}

// ---- forward ----------------------------------------------------------------

namespace {

ad::Var linear(ad::Var x, const BoundParameters& p, const std::string& weight, const std::string& bias) {
  return ad::add_row(ad::matmul(x, p.at(weight)), p.at(bias));
}

/// Six relu'd channels concatenated in expert order.
ad::Var encoder_channels(ad::Var H, const GraphBatch& b, const MessageWeights& w, const MoeConfig& c) {
  const ad::Var gathered = ad::gather_rows(H, w.msg_src);
  std::array<ad::Var, kNumExperts> parts;
  for (int rho = 0; rho < 2; ++rho) {
    const PooledStats s = pool_weighted(gathered, w.message[rho], w.msg_dst, b.num_nodes, c.std_mode, c.std_epsilon);
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      if (kChannels[e].rho == rho) parts[e] = ad::relu(s.get(kChannels[e].pooling));
    }
  }
  return ad::concat_cols(parts);
}

ad::Var encoder_layer(ad::Var H, std::size_t layer, const GraphBatch& b, const MessageWeights& w,
                      const MoeModel& model, const BoundParameters& p, const ForwardOptions& options) {
  const MoeConfig& c = model.config();
  ad::Var out = ad::relu(linear(encoder_channels(H, b, w, c), p, MoeModel::encoder_weight(layer),
                                MoeModel::encoder_bias(layer)));
  if (options.training && c.dropout > 0.0) out = ad::dropout(out, c.dropout, mix_seed(options.dropout_seed, layer));
  return out;
}

}  // namespace

namespace {

ad::Var router_scores(const BoundParameters& p, ad::Var descriptor) {
  return linear(ad::relu(linear(descriptor, p, "gate.hidden.weight", "gate.hidden.bias")), p, "gate.out.weight",
                "gate.out.bias");
}

ad::Var gate_from_scores(const MoeConfig& c, ad::Var scores) {
  switch (c.variant) {
    case GateVariant::Uniform:
      return ad::add_scalar(ad::scale(scores, 0.0), 1.0 / static_cast<double>(kNumExperts));
    case GateVariant::Temperature:
      return ad::softmax_rows(ad::scale(scores, 1.0 / c.temperature));
    case GateVariant::TopK:
      return ad::topk_normalize(ad::softmax_rows(scores), c.k);
  }
  return scores;
}

}  // namespace

ad::Var gate(const MoeModel& model, const BoundParameters& p, ad::Var descriptor) {
  return gate_from_scores(model.config(), router_scores(p, descriptor));
}

ForwardResult forward(ad::Tape& tape, const MoeModel& model, const BoundParameters& p, const GraphBatch& b,
                      const ForwardOptions& options) {
  const MoeConfig& c = model.config();
  if (b.features.cols() != c.input_dim) {
    throw ShapeError("node features have dimension " + std::to_string(b.features.cols()) + ", model expects " +
                     std::to_string(c.input_dim));
  }
  const MessageWeights w = message_weights(tape, b, options.edge_mask);

  ad::Var H = tape.constant(b.features);
  for (std::size_t l = 0; l < c.layers; ++l) H = encoder_layer(H, l, b, w, model, p, options);

  ForwardResult r;
  r.node_states = H;
  for (int rho = 0; rho < 2; ++rho) {
    const PooledStats s = pool_weighted(H, w.readout[rho], b.node_graph, b.num_graphs, c.std_mode, c.std_epsilon);
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      if (kChannels[e].rho == rho) r.readouts[e] = s.get(kChannels[e].pooling);
    }
  }
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    r.expert_logits[e] = linear(r.readouts[e], p, MoeModel::expert_weight(e), MoeModel::expert_bias(e));
  }
  const ad::Var descriptor = ad::concat_cols(r.readouts);
  r.router_logits = router_scores(p, descriptor);
  r.gates = gate_from_scores(c, r.router_logits);

  ad::Var mix;
  for (std::size_t e = 0; e < kNumExperts; ++e) {
    const ad::Var term = ad::mul_col(r.expert_logits[e], ad::slice_cols(r.gates, e, 1));
    mix = e == 0 ? term : ad::add(mix, term);
  }
  r.logits = mix;
  return r;
}

std::vector<ModelOutput> model_forward(const MoeModel& model, std::span<const Cfg* const> graphs) {
  ad::Tape tape;
  const BoundParameters p = bind_parameters(tape, model.parameters(), false);
  const GraphBatch b = make_batch(graphs);
  const ForwardResult r = forward(tape, model, p, b);

  std::vector<ModelOutput> out(b.num_graphs);
  for (std::size_t g = 0; g < b.num_graphs; ++g) {
    ModelOutput& o = out[g];
    for (std::size_t k = 0; k < kNumClasses; ++k) o.logits[k] = r.logits.value()(g, k);
    for (std::size_t e = 0; e < kNumExperts; ++e) {
      o.gates[e] = r.gates.value()(g, e);
      for (std::size_t k = 0; k < kNumClasses; ++k) o.expert_logits[e][k] = r.expert_logits[e].value()(g, k);
      const auto row = r.readouts[e].value().row_span(g);
      o.readouts[e].assign(row.begin(), row.end());
    }
    o.predicted = o.logits[1] > o.logits[0] ? 1 : 0;
  }
  return out;
}

ModelOutput model_forward(const MoeModel& model, const Cfg& g) {
  const Cfg* one[] = {&g};
  return model_forward(model, std::span<const Cfg* const>(one)).front();
}

int predict(const MoeModel& model, const Cfg& g) { return model_forward(model, g).predicted; }

// ---- single-graph views -----------------------------------------------------

std::vector<std::pair<std::size_t, double>> neighbor_weights(const Cfg& g, std::size_t node, int rho) {
  if (node >= g.num_nodes) throw ValidationError("neighbor_weights: node " + std::to_string(node) + " out of range");
  if (rho != 0 && rho != 1) throw ValidationError("neighbor_weights: rho must be 0 or 1");
  const GraphBatch b = make_batch(g);
  ad::Tape tape;
  const MessageWeights w = message_weights(tape, b);
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t m = 0; m < w.msg_dst.size(); ++m) {
    if (w.msg_dst[m] == node) out.emplace_back(w.msg_src[m], w.message[rho].value()[m]);
  }
  return out;
}

Tensor aggregate_channel(const Tensor& H, const Cfg& g, ChannelSpec spec, StdMode mode, double epsilon) {
  if (H.rows() != g.num_nodes) {
    throw ShapeError("aggregate_channel: H has " + std::to_string(H.rows()) + " rows for " +
                     std::to_string(g.num_nodes) + " nodes");
  }
  const GraphBatch b = make_batch(g);
  ad::Tape tape;
  const MessageWeights w = message_weights(tape, b);
  const ad::Var gathered = ad::gather_rows(tape.constant(H), w.msg_src);
  return pool_weighted(gathered, w.message[spec.rho], w.msg_dst, b.num_nodes, mode, epsilon).get(spec.pooling).value();
}

Tensor expert_readout(const Tensor& H, const Cfg& g, ChannelSpec spec, StdMode mode, double epsilon) {
  if (H.rows() != g.num_nodes) {
    throw ShapeError("expert_readout: H has " + std::to_string(H.rows()) + " rows for " +
                     std::to_string(g.num_nodes) + " nodes");
  }
  const GraphBatch b = make_batch(g);
  ad::Tape tape;
  const MessageWeights w = message_weights(tape, b);
  return pool_weighted(tape.constant(H), w.readout[spec.rho], b.node_graph, 1, mode, epsilon)
      .get(spec.pooling)
      .value();
}

Tensor layer_forward(const MoeModel& model, std::size_t layer, const Tensor& H, const Cfg& g) {
  if (layer >= model.config().layers) throw ValidationError("layer_forward: layer out of range");
  const GraphBatch b = make_batch(g);
  ad::Tape tape;
  const BoundParameters p = bind_parameters(tape, model.parameters(), false);
  const MessageWeights w = message_weights(tape, b);
  return encoder_layer(tape.constant(H), layer, b, w, model, p, ForwardOptions{}).value();
}

}  // namespace cfgmoe
