#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "cfgmoe/tensor.hpp"

namespace cfgmoe::ad {

class Tape;
class Gradients;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  bool tracked() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient store produced by Tape::backward.
class Gradients {
 public:
  explicit Gradients(const Tape& tape);

  /// Gradient of the root with respect to v; zeros if v never reached the root.
  Tensor of(Var v) const;
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);

  const Tensor* raw(std::size_t id) const;

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is already a topological order; backward walks it once in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, Gradients& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an operation result. The backward closure is kept only when at
  /// least one input is tracked.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Gradients of a scalar root with respect to every tracked node.
  Gradients backward(Var root) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  const char* op(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    Tensor value;
    bool tracked = false;
    const char* op = "leaf";
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (R x C) plus a 1 x C row broadcast over rows.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
/// Scales row r of a (R x C) by s[r] where s is R x 1.
Var mul_col(Var a, Var s);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var sqrt(Var a);
Var log(Var a);
Var softmax_rows(Var a);
/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> index);
Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t n);
/// Component-wise maximum per segment; empty segments yield 0. The gradient
/// goes to the first row that attains the maximum.
Var segment_max(Var a, std::span<const std::size_t> segment, std::size_t n);
/// Column vector w (P x 1) divided by its per-segment sum. A segment whose sum
/// is exactly zero is normalized from `fallback` instead.
Var segment_normalize(Var w, Var fallback, std::span<const std::size_t> segment, std::size_t n);
/// Per row: keep the k largest entries (ties to the lower column), zero the
/// rest, and divide by the kept sum.
Var topk_normalize(Var p, std::size_t k);
/// Elementwise a * log(factor * a) with 0 log 0 = 0.
Var xlogx(Var a, double factor);
Var sum(Var a);
Var mean_rows(Var a);
/// Inverted dropout: keep with probability 1-p, scale kept entries by 1/(1-p).
/// The Bernoulli mask is a pure function of `seed`.
Var dropout(Var a, double p, std::uint64_t seed);

}  // namespace cfgmoe::ad
