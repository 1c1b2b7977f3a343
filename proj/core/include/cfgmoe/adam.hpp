#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cfgmoe/tensor.hpp"

namespace cfgmoe {

/// Named parameter tensors; std::map keeps iteration (and so serialization and
/// update) order stable.
using ParameterMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One bias-corrected update. Parameters absent from `grads` are treated as
  /// having zero gradient. Throws DivergenceError naming the first parameter
  /// whose gradient is not finite; nothing is updated in that case.
  void step(ParameterMap& params, const ParameterMap& grads);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }
  const Tensor& first_moment(const std::string& name) const { return first_.at(name); }
  const Tensor& second_moment(const std::string& name) const { return second_.at(name); }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  ParameterMap first_;
  ParameterMap second_;
};

}  // namespace cfgmoe
