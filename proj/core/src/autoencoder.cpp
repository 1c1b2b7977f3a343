#include "cfgmoe/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe {

namespace {

constexpr std::size_t kLayers = 6;

std::pair<std::size_t, std::size_t> layer_dims(std::size_t layer) {
  // 0..2 walk down the widths, 3..5 walk back up.
  if (layer < 3) return {kAutoencoderWidths[layer], kAutoencoderWidths[layer + 1]};
  const std::size_t k = kLayers - layer;
  return {kAutoencoderWidths[k], kAutoencoderWidths[k - 1]};
}

ad::Var lookup(const std::vector<std::pair<std::string, ad::Var>>& params, const std::string& name) {
  for (const auto& [n, v] : params) {
    if (n == name) return v;
  }
  throw ValidationError("autoencoder: missing parameter '" + name + "'");
}

ad::Var run_layers(const std::vector<std::pair<std::string, ad::Var>>& params, ad::Var x, std::size_t first,
                   std::size_t last) {
  for (std::size_t l = first; l < last; ++l) {
    x = ad::relu(ad::add_row(ad::matmul(x, lookup(params, AutoencoderParams::weight_name(l))),
                             lookup(params, AutoencoderParams::bias_name(l))));
  }
  return x;
}

std::vector<std::pair<std::string, ad::Var>> bind_constant(ad::Tape& tape, const ParameterMap& params) {
  std::vector<std::pair<std::string, ad::Var>> out;
  for (const auto& [name, value] : params) out.emplace_back(name, tape.constant(value));
  return out;
}

void check_width(const Tensor& vectors, const char* what) {
  if (vectors.rank() != 2 || vectors.cols() != kAutoencoderWidths[0]) {
    throw ShapeError(std::string(what) + ": input has shape " + shape_string(vectors.shape()) + ", expected Mx" +
                     std::to_string(kAutoencoderWidths[0]));
  }
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out = Tensor::zeros(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(x.row_span(rows[r]).begin(), x.row_span(rows[r]).end(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace

std::string AutoencoderParams::weight_name(std::size_t layer) { return "layer." + std::to_string(layer) + ".weight"; }
std::string AutoencoderParams::bias_name(std::size_t layer) { return "layer." + std::to_string(layer) + ".bias"; }

AutoencoderParams AutoencoderParams::initialize(std::uint64_t seed) {
  Rng rng(seed);
  AutoencoderParams p;
  for (std::size_t l = 0; l < kLayers; ++l) {
    const auto [in, out] = layer_dims(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w = Tensor::zeros(in, out);
    for (auto& v : w.values()) v = rng.uniform(-limit, limit);
    p.params[weight_name(l)] = std::move(w);
    // Reconstruction targets lie in [0, 1]. Starting the last layer at 0.5
    // keeps every output relu active, otherwise outputs that start negative
    // never receive gradient.
    p.params[bias_name(l)] = Tensor::full(1, out, l + 1 == kLayers ? 0.5 : 0.0);
  }
  return p;
}

void AutoencoderParams::validate() const {
  if (params.size() != 2 * kLayers) {
    throw ValidationError("autoencoder: expected " + std::to_string(2 * kLayers) + " tensors, got " +
                          std::to_string(params.size()));
  }
  for (std::size_t l = 0; l < kLayers; ++l) {
    const auto [in, out] = layer_dims(l);
    const std::pair<std::string, Shape> expected[] = {{weight_name(l), Shape{in, out}}, {bias_name(l), Shape{1, out}}};
    for (const auto& [name, shape] : expected) {
      auto it = params.find(name);
      if (it == params.end()) throw ValidationError("autoencoder: missing parameter '" + name + "'");
      if (it->second.shape() != shape) {
        throw ShapeError("autoencoder: parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                         ", expected " + shape_string(shape));
      }
      if (!it->second.all_finite()) throw ValidationError("autoencoder: parameter '" + name + "' is not finite");
    }
  }
}

std::size_t AutoencoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

ad::Var autoencoder_loss(ad::Tape&, const std::vector<std::pair<std::string, ad::Var>>& params, ad::Var x) {
  const ad::Var diff = ad::sub(run_layers(params, x, 0, kLayers), x);
  const double rows = static_cast<double>(x.value().rows());
  return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / rows);
}

double reconstruction_mse(const AutoencoderParams& params, const Tensor& vectors) {
  check_width(vectors, "reconstruction_mse");
  ad::Tape tape;
  return autoencoder_loss(tape, bind_constant(tape, params.params), tape.constant(vectors)).value().item();
}

Tensor encode_nodes(const AutoencoderParams& params, const Tensor& vectors) {
  check_width(vectors, "encode_nodes");
  ad::Tape tape;
  return run_layers(bind_constant(tape, params.params), tape.constant(vectors), 0, 3).value();
}

Tensor reconstruct(const AutoencoderParams& params, const Tensor& vectors) {
  check_width(vectors, "reconstruct");
  ad::Tape tape;
  return run_layers(bind_constant(tape, params.params), tape.constant(vectors), 0, kLayers).value();
}

AutoencoderTraining train_autoencoder(const Tensor& vectors, const AutoencoderConfig& config) {
  check_width(vectors, "train_autoencoder");
  if (vectors.rows() == 0) throw ValidationError("train_autoencoder: empty corpus");
  if (!vectors.all_finite()) throw ValidationError("train_autoencoder: corpus contains non-finite values");
  if (!(config.learning_rate > 0.0)) throw ValidationError("train_autoencoder: learning rate must be positive");

  AutoencoderTraining result;
  result.params = AutoencoderParams::initialize(config.seed);
  Adam adam(AdamConfig{.learning_rate = config.learning_rate});
  Rng rng(mix_seed(config.seed, 1));

  const std::size_t m = vectors.rows();
  const std::size_t batch = config.batch_size == 0 ? m : std::min(config.batch_size, m);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < m) rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < m; start += batch) {
      const std::size_t count = std::min(batch, m - start);
      ad::Tape tape;
      std::vector<std::pair<std::string, ad::Var>> bound;
      for (const auto& [name, value] : result.params.params) bound.emplace_back(name, tape.variable(value));
      const ad::Var x = tape.constant(batch == m ? vectors : take_rows(vectors, std::span(order).subspan(start, count)));
      const ad::Var loss = autoencoder_loss(tape, bound, x);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw DivergenceError("autoencoder loss is not finite", static_cast<long>(epoch));
      total += value * static_cast<double>(count);

      const ad::Gradients grads = tape.backward(loss);
      ParameterMap g;
      for (const auto& [name, var] : bound) g[name] = grads.of(var);
      try {
        adam.step(result.params.params, g);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what(), static_cast<long>(epoch));
      }
    }
    result.history.push_back(total / static_cast<double>(m));

    const std::size_t w = config.early_stop_window;
    const std::size_t h = result.history.size();
    if (w > 0 && h > w && result.history[h - 1 - w] - result.history[h - 1] < config.early_stop_delta) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace cfgmoe
