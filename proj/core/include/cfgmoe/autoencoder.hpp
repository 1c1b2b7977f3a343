#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cfgmoe/adam.hpp"
#include "cfgmoe/autodiff.hpp"
#include "cfgmoe/tensor.hpp"

namespace cfgmoe {

/// Encoder widths; the decoder mirrors them.
inline constexpr std::array<std::size_t, 4> kAutoencoderWidths = {439, 256, 128, 64};
inline constexpr std::size_t kLatentWidth = 64;

/// Six dense layers (three encoder, three decoder), each followed by relu.
struct AutoencoderParams {
  ParameterMap params;

  /// Glorot-uniform weights; biases zero except the reconstruction layer (0.5).
  static AutoencoderParams initialize(std::uint64_t seed);
  /// Checks names and shapes against the mirrored architecture.
  void validate() const;
  std::size_t parameter_count() const;

  static std::string weight_name(std::size_t layer);  // layer 0..5
  static std::string bias_name(std::size_t layer);
};

struct AutoencoderConfig {
  std::size_t epochs = 500;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// 0 trains on the full corpus per step.
  std::size_t batch_size = 0;
  /// Stop once the loss improved by less than `early_stop_delta` over the last
  /// `early_stop_window` epochs; a window of 0 disables early stopping.
  std::size_t early_stop_window = 100;
  double early_stop_delta = 1e-6;
};

struct AutoencoderTraining {
  AutoencoderParams params;
  /// history[e]: mean reconstruction MSE seen by the updates of epoch e,
  /// measured before each update.
  std::vector<double> history;
  bool stopped_early = false;
};

/// Rows of `vectors` are 439-dim encodings. Throws DivergenceError carrying
/// the epoch when the loss stops being finite.
AutoencoderTraining train_autoencoder(const Tensor& vectors, const AutoencoderConfig& config);

/// Mean over rows of the squared reconstruction error summed across columns.
ad::Var autoencoder_loss(ad::Tape& tape, const std::vector<std::pair<std::string, ad::Var>>& params, ad::Var x);

double reconstruction_mse(const AutoencoderParams& params, const Tensor& vectors);
Tensor encode_nodes(const AutoencoderParams& params, const Tensor& vectors);
Tensor reconstruct(const AutoencoderParams& params, const Tensor& vectors);

}  // namespace cfgmoe
