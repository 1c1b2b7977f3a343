#pragma once

#include <array>
#include <vector>

#include "cfgmoe/cfg.hpp"
#include "cfgmoe/moe.hpp"

namespace cfgmoe::testing {

using Matrix = std::vector<std::vector<double>>;

struct OracleOutput {
  std::array<double, 2> logits{};
  std::array<double, 6> gates{};
  std::array<std::array<double, 2>, 6> expert_logits{};
  std::array<std::vector<double>, 6> readouts;
};

/// Straight loop-nest evaluation of the model on one graph: adjacency sets,
/// explicit weight normalization, per-node statistics, dense layers. Shares no
/// code with the library beyond reading the parameter tensors.
OracleOutput dense_forward(const MoeModel& model, const Cfg& g);

Matrix to_matrix(const Tensor& t);

/// One encoder layer in evaluation mode.
Matrix dense_layer(const MoeModel& model, std::size_t layer, const Matrix& H, const Cfg& g);

/// Undirected degrees from an adjacency matrix.
std::vector<std::size_t> dense_degrees(const Cfg& g);

}  // namespace cfgmoe::testing
