#include "cfgmoe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& point) {
  ad::Tape tape;
  std::vector<ad::Var> inputs;
  inputs.reserve(point.size());
  for (const Tensor& t : point) inputs.push_back(tape.constant(t));
  return f(tape, inputs).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& point, GradCheckOptions options) {
  if (!(options.step > 0.0)) throw ValidationError("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> inputs;
    for (const Tensor& t : point) inputs.push_back(tape.variable(t));
    ad::Var root = f(tape, inputs);
    ad::Gradients grads = tape.backward(root);
    for (const ad::Var& v : inputs) analytic.push_back(grads.of(v));
  }

  GradCheckReport report;
  Rng rng(options.seed);
  std::vector<Tensor> probe = point;
  for (std::size_t input = 0; input < point.size(); ++input) {
    std::vector<std::size_t> coords(point[input].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input && coords.size() > options.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = point[input][i];
      probe[input][i] = original + options.step;
      const double up = evaluate(f, probe);
      probe[input][i] = original - options.step;
      const double down = evaluate(f, probe);
      probe[input][i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[input][i];
      const double err = relative_error(a, numeric, options.floor);
      ++report.checked;
      if (err > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        if (err >= report.max_relative_error) {
          report.worst_input = input;
          report.worst_index = i;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace cfgmoe
