#include "cfgmoe/training.hpp"

#include <cmath>
#include <numeric>

#include "cfgmoe/adam.hpp"
#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

double TrainConfig::effective_lb() const noexcept {
  return load_balancing && model.variant != GateVariant::Uniform ? lb_coefficient : 0.0;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("train: batch size must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (!(lb_coefficient >= 0.0)) throw ValidationError("train: lb coefficient must be non-negative");
  model.validate();
}

ad::Var lb_loss(ad::Var gates) {
  if (gates.value().rows() == 0) throw ValidationError("lb_loss: empty batch");
  if (gates.value().cols() != kNumExperts) {
    throw ShapeError("lb_loss: gates have shape " + shape_string(gates.value().shape()) + ", expected Bx6");
  }
  return ad::sum(ad::xlogx(ad::mean_rows(gates), static_cast<double>(kNumExperts)));
}

double lb_loss(const Tensor& gates) {
  ad::Tape tape;
  return lb_loss(tape.constant(gates)).value().item();
}

LossTerms total_loss(const ForwardResult& forward, std::span<const int> labels, double lb_coefficient) {
  LossTerms t;
  t.ce = ad::softmax_cross_entropy(forward.logits, labels);
  t.lb = lb_loss(forward.gates);
  t.total = lb_coefficient == 0.0 ? ad::add_scalar(t.ce, 0.0) : ad::add(t.ce, ad::scale(t.lb, lb_coefficient));
  return t;
}

LossTerms total_loss(ad::Tape& tape, const MoeModel& model, const BoundParameters& params, const GraphBatch& batch,
                     const TrainConfig& config, const ForwardOptions& options) {
  return total_loss(forward(tape, model, params, batch, options), batch.labels, config.effective_lb());
}

TrainResult train(const Dataset& train_set, const TrainConfig& config) {
  config.validate();
  if (train_set.graphs.empty()) throw ValidationError("train: training set is empty");
  const auto counts = train_set.class_counts();
  if (counts[0] == 0 || counts[1] == 0) throw ValidationError("train: training set must contain both classes");
  for (const auto& g : train_set.graphs) g.validate();

  MoeConfig mc = config.model;
  mc.input_dim = train_set.graphs.front().feature_dim();
  TrainResult result{MoeModel(mc, mix_seed(config.seed, 0)), {}};
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  Rng shuffler(mix_seed(config.seed, 1));
  const std::uint64_t dropout_stream = mix_seed(config.seed, 2);

  const std::size_t n = train_set.graphs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffler.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      std::vector<const Cfg*> members;
      for (std::size_t i = start; i < start + count; ++i) members.push_back(&train_set.graphs[order[i]]);
      const GraphBatch batch = make_batch(members);

      ad::Tape tape;
      const BoundParameters params = bind_parameters(tape, result.model.parameters(), true);
      ForwardOptions options;
      options.training = true;
      options.dropout_seed = mix_seed(dropout_stream, step++);
      const ForwardResult fwd = forward(tape, result.model, params, batch, options);
      const LossTerms loss = total_loss(fwd, batch.labels, config.effective_lb());
      const double value = loss.total.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch), static_cast<long>(epoch));
      }

      const double w = static_cast<double>(count);
      rec.loss += value * w;
      rec.ce += loss.ce.value().item() * w;
      rec.lb += loss.lb.value().item() * w;
      for (std::size_t b = 0; b < count; ++b) {
        const int pred = fwd.logits.value()(b, 1) > fwd.logits.value()(b, 0) ? 1 : 0;
        correct += pred == batch.labels[b] ? 1 : 0;
        for (std::size_t e = 0; e < kNumExperts; ++e) rec.mean_gate[e] += fwd.gates.value()(b, e);
      }

      const ad::Gradients grads = tape.backward(loss.total);
      ParameterMap g;
      for (const auto& [name, var] : params.vars) g[name] = grads.of(var);
      try {
        adam.step(result.model.parameters(), g);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch), static_cast<long>(epoch));
      }
    }
    const double total = static_cast<double>(n);
    rec.loss /= total;
    rec.ce /= total;
    rec.lb /= total;
    rec.train_accuracy = static_cast<double>(correct) / total;
    for (auto& q : rec.mean_gate) q /= total;
    result.history.push_back(rec);
  }
  return result;
}

CsvTable history_table(std::span<const EpochRecord> history) {
  std::vector<std::string> header = {"epoch", "loss", "ce", "lb", "train_acc"};
  for (std::size_t e = 0; e < kNumExperts; ++e) header.push_back("gate_" + expert_name(e));
  CsvTable table(std::move(header));
  for (const auto& r : history) {
    std::vector<std::string> row = {std::to_string(r.epoch), format_double(r.loss), format_double(r.ce),
                                    format_double(r.lb), format_double(r.train_accuracy)};
    for (double q : r.mean_gate) row.push_back(format_double(q));
    table.add_row(std::move(row));
  }
  return table;
}

}  // namespace cfgmoe
