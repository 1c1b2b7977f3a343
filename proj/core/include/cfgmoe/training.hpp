#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cfgmoe/autodiff.hpp"
#include "cfgmoe/cfg.hpp"
#include "cfgmoe/csv.hpp"
#include "cfgmoe/moe.hpp"

namespace cfgmoe {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  double lb_coefficient = 0.01;
  /// False for the ablation that trains without the balancing term.
  bool load_balancing = true;
  std::uint64_t seed = 0;
  /// Architecture, dropout and gate variant. input_dim is taken from the data.
  MoeConfig model;

  /// Coefficient actually applied: zero for uniform gates or with balancing off.
  double effective_lb() const noexcept;
  void validate() const;
};

struct LossTerms {
  ad::Var total;
  ad::Var ce;
  ad::Var lb;
};

/// q_e = batch mean of the gates; sum_e q_e log(6 q_e) with 0 log 0 = 0.
ad::Var lb_loss(ad::Var gates);
double lb_loss(const Tensor& gates);

LossTerms total_loss(const ForwardResult& forward, std::span<const int> labels, double lb_coefficient);

/// Forward + loss on one batch of graphs, on a fresh set of tape variables.
LossTerms total_loss(ad::Tape& tape, const MoeModel& model, const BoundParameters& params, const GraphBatch& batch,
                     const TrainConfig& config, const ForwardOptions& options = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double lb = 0.0;
  double train_accuracy = 0.0;
  std::array<double, kNumExperts> mean_gate{};
};

struct TrainResult {
  MoeModel model;
  std::vector<EpochRecord> history;
};

/// Initializes from config.seed and runs seeded mini-batch Adam. Throws
/// DivergenceError with the epoch when the loss or a gradient stops being finite.
TrainResult train(const Dataset& train_set, const TrainConfig& config);

CsvTable history_table(std::span<const EpochRecord> history);

}  // namespace cfgmoe
