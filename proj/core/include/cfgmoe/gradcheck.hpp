#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfgmoe/autodiff.hpp"

namespace cfgmoe {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: |a - b| / max(|a|, |b|, floor). Keeps components whose
  /// true gradient is ~0 from reporting roundoff as a large relative error.
  double floor = 1e-6;
  /// Coordinates sampled per input tensor; 0 checks every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Scalar function of several tensor inputs, built on the provided tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

double relative_error(double analytic, double numeric, double floor);

/// Compares tape gradients of f at `point` with central differences.
GradCheckReport finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& point, GradCheckOptions options = {});

}  // namespace cfgmoe
