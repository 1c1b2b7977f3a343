#include "cfgmoe/adam.hpp"

#include <cmath>

#include "cfgmoe/error.hpp"

namespace cfgmoe {

void Adam::step(ParameterMap& params, const ParameterMap& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("adam: gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g)) {
      throw ShapeError("adam: gradient shape " + shape_string(g.shape()) + " does not match parameter '" + name +
                       "' " + shape_string(it->second.shape()));
    }
    if (!g.all_finite()) throw DivergenceError("adam: non-finite gradient for parameter '" + name + "'");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);

  for (auto& [name, param] : params) {
    auto [m_it, m_new] = first_.try_emplace(name, param.shape(), 0.0);
    auto [v_it, v_new] = second_.try_emplace(name, param.shape(), 0.0);
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    auto g_it = grads.find(name);
    const Tensor* g = g_it == grads.end() ? nullptr : &g_it->second;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      param[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace cfgmoe
