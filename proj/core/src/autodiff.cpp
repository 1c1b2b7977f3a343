#include "cfgmoe/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cfgmoe/error.hpp"
#include "cfgmoe/rng.hpp"

namespace cfgmoe::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Tensor& t) { return MapC(t.values().data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.values().data(), t.rows(), t.cols()); }

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ValidationError("autodiff: uninitialized variable");
    if (tape && v.tape() != tape) throw ValidationError("autodiff: variables from different tapes");
    tape = v.tape();
  }
  return *tape;
}

Tape& tape_of(std::span<const Var> vars) {
  if (vars.empty()) throw ValidationError("autodiff: empty input list");
  Tape* tape = vars.front().tape();
  for (const Var& v : vars) {
    if (!v.valid() || v.tape() != tape) throw ValidationError("autodiff: variables from different tapes");
  }
  return *tape;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

Tensor matrix_like(const Tensor& t) { return Tensor::zeros(t.rows(), t.cols()); }

void check_segments(const char* op, std::size_t rows, std::span<const std::size_t> segment, std::size_t n) {
  if (segment.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(segment.size()) + " segment ids for " +
                     std::to_string(rows) + " rows");
  }
  for (std::size_t s : segment) {
    if (s >= n) throw ShapeError(std::string(op) + ": segment id " + std::to_string(s) + " >= " + std::to_string(n));
  }
}

}  // namespace

// ---- Var / Gradients / Tape --------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::tracked() const { return tape_->tracked(id_); }

Gradients::Gradients(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

Tensor Gradients::of(Var v) const {
  const Tensor& g = grads_.at(v.id());
  if (!g.empty()) return g;
  const Tensor& value = tape_->value(v.id());
  return Tensor(value.shape(), 0.0);
}

void Gradients::accumulate(Var v, const Tensor& g) {
  if (!v.tracked()) return;
  Tensor& slot = grads_[v.id()];
  if (slot.empty()) {
    slot = Tensor(tape_->value(v.id()).shape(), std::vector<double>(g.values().begin(), g.values().end()));
  } else {
    slot += g;
  }
}

void Gradients::accumulate(Var v, Tensor&& g) {
  if (!v.tracked()) return;
  Tensor& slot = grads_[v.id()];
  if (slot.empty()) {
    const Shape shape = tape_->value(v.id()).shape();
    std::vector<double> data(g.values().begin(), g.values().end());
    slot = Tensor(shape, std::move(data));
  } else {
    slot += g;
  }
}

const Tensor* Gradients::raw(std::size_t id) const {
  const Tensor& g = grads_.at(id);
  return g.empty() ? nullptr : &g;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, "constant", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, "variable", {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.tracked(); });
  nodes_.push_back(Node{std::move(value), tracked, op, tracked ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var root) const {
  if (root.tape() != this) throw ValidationError("backward: root belongs to another tape");
  const Tensor& root_value = value(root.id());
  if (root_value.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(root_value.shape()));
  }
  Gradients grads(*this);
  grads.accumulate(root, Tensor(root_value.shape(), 1.0));
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backward) continue;
    const Tensor* g = grads.raw(id);
    if (!g) continue;
    node.backward(*g, grads);
  }
  return grads;
}

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& tape = tape_of({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return tape.record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g, Gradients& grads) {
    if (a.tracked()) {
      Tensor da = matrix_like(a.value());
      view(da).noalias() = view(g) * view(b.value()).transpose();
      grads.accumulate(a, std::move(da));
    }
    if (b.tracked()) {
      Tensor db = matrix_like(b.value());
      view(db).noalias() = view(a.value()).transpose() * view(g);
      grads.accumulate(b, std::move(db));
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of({a, b});
  if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  return tape.record("add", std::move(out), {a, b}, [a, b](const Tensor& g, Gradients& grads) {
    grads.accumulate(a, g);
    grads.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of({a, b});
  if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](const Tensor& g, Gradients& grads) {
    grads.accumulate(a, g);
    if (b.tracked()) {
      Tensor nb = g;
      nb *= -1.0;
      grads.accumulate(b, std::move(nb));
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& tape = tape_of({a, row});
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row", av, rv);
  Tensor out = av;
  view(out).rowwise() += view(rv).row(0);
  return tape.record("add_row", std::move(out), {a, row}, [a, row](const Tensor& g, Gradients& grads) {
    grads.accumulate(a, g);
    if (row.tracked()) {
      Tensor dr = matrix_like(row.value());
      view(dr).row(0) = view(g).colwise().sum();
      grads.accumulate(row, std::move(dr));
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of({a, b});
  if (!a.value().same_shape(b.value())) shape_error("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](const Tensor& g, Gradients& grads) {
    if (a.tracked()) {
      Tensor da = g;
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= bv[i];
      grads.accumulate(a, std::move(da));
    }
    if (b.tracked()) {
      Tensor db = g;
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= av[i];
      grads.accumulate(b, std::move(db));
    }
  });
}

Var mul_col(Var a, Var s) {
  Tape& tape = tape_of({a, s});
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != av.rows()) shape_error("mul_col", av, sv);
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double w = sv[r];
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= w;
  }
  return tape.record("mul_col", std::move(out), {a, s}, [a, s](const Tensor& g, Gradients& grads) {
    const Tensor& av = a.value();
    const Tensor& sv = s.value();
    const std::size_t cols = av.cols();
    if (a.tracked()) {
      Tensor da = g;
      for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) da[r * cols + c] *= sv[r];
      }
      grads.accumulate(a, std::move(da));
    }
    if (s.tracked()) {
      Tensor ds = matrix_like(sv);
      for (std::size_t r = 0; r < av.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c] * av[r * cols + c];
        ds[r] = acc;
      }
      grads.accumulate(s, std::move(ds));
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  out *= s;
  return tape.record("scale", std::move(out), {a}, [a, s](const Tensor& g, Gradients& grads) {
    Tensor da = g;
    da *= s;
    grads.accumulate(a, std::move(da));
  });
}

Var add_scalar(Var a, double s) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return tape.record("add_scalar", std::move(out), {a},
                     [a](const Tensor& g, Gradients& grads) { grads.accumulate(a, g); });
}

Var relu(Var a) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return tape.record("relu", std::move(out), {a}, [a](const Tensor& g, Gradients& grads) {
    Tensor da = g;
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (!(av[i] > 0.0)) da[i] = 0.0;
    }
    grads.accumulate(a, std::move(da));
  });
}

Var sqrt(Var a) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) {
    if (v < 0.0) throw ValidationError("sqrt: negative input " + std::to_string(v));
    v = std::sqrt(v);
  }
  const std::size_t out_id = tape.size();
  return tape.record("sqrt", std::move(out), {a}, [a, out_id](const Tensor& g, Gradients& grads) {
    const Tensor& y = a.tape()->value(out_id);
    Tensor da = g;
    // Zero at y == 0 where the derivative is unbounded.
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = y[i] > 0.0 ? da[i] / (2.0 * y[i]) : 0.0;
    grads.accumulate(a, std::move(da));
  });
}

Var log(Var a) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) {
    if (!(v > 0.0)) throw ValidationError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return tape.record("log", std::move(out), {a}, [a](const Tensor& g, Gradients& grads) {
    Tensor da = g;
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] /= av[i];
    grads.accumulate(a, std::move(da));
  });
}

namespace {

void softmax_row(std::span<const double> in, std::span<double> out) {
  const double m = *std::max_element(in.begin(), in.end());
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

}  // namespace

Var softmax_rows(Var a) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  if (av.cols() == 0) throw ShapeError("softmax: zero columns");
  Tensor out = matrix_like(av);
  for (std::size_t r = 0; r < av.rows(); ++r) softmax_row(av.row_span(r), out.row_span(r));
  const std::size_t out_id = tape.size();
  return tape.record("softmax", std::move(out), {a}, [a, out_id](const Tensor& g, Gradients& grads) {
    const Tensor& y = a.tape()->value(out_id);
    Tensor da = matrix_like(y);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) da(r, c) = y(r, c) * (g(r, c) - dot);
    }
    grads.accumulate(a, std::move(da));
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = tape_of({logits});
  const Tensor& z = logits.value();
  if (labels.size() != z.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(z.shape()));
  }
  Tensor probs = matrix_like(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
    auto row = z.row_span(r);
    const double m = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - m);
    loss += -(row[y] - m - std::log(total));
    softmax_row(row, probs.row_span(r));
  }
  const double n = static_cast<double>(z.rows());
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", Tensor::scalar(loss / n), {logits},
                     [logits, probs = std::move(probs), owned = std::move(owned), n](const Tensor& g,
                                                                                     Gradients& grads) {
                       Tensor dz = probs;
                       for (std::size_t r = 0; r < dz.rows(); ++r) dz(r, owned[r]) -= 1.0;
                       dz *= g.item() / n;
                       grads.accumulate(logits, std::move(dz));
                     });
}

Var concat_cols(std::span<const Var> parts) {
  Tape& tape = tape_of(parts);
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.value().cols();
  }
  Tensor out = Tensor::zeros(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    view(out).middleCols(offset, p.value().cols()) = view(p.value());
    offset += p.value().cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat_cols", std::move(out), parts, [inputs](const Tensor& g, Gradients& grads) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t c = p.value().cols();
      if (p.tracked()) {
        Tensor dp = matrix_like(p.value());
        view(dp) = view(g).middleCols(offset, c);
        grads.accumulate(p, std::move(dp));
      }
      offset += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  Tape& tape = tape_of(parts);
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat_rows", Tensor(Shape{rows, cols}, std::move(data)), parts,
                     [inputs](const Tensor& g, Gradients& grads) {
                       std::size_t offset = 0;
                       for (const Var& p : inputs) {
                         const std::size_t n = p.value().size();
                         if (p.tracked()) {
                           std::vector<double> slice(g.values().begin() + offset,
                                                     g.values().begin() + offset + n);
                           grads.accumulate(p, Tensor(Shape{p.value().rows(), p.value().cols()}, std::move(slice)));
                         }
                         offset += n;
                       }
                     });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  if (start + count > av.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_string(av.shape()));
  }
  Tensor out = Tensor::zeros(av.rows(), count);
  view(out) = view(av).middleCols(start, count);
  return tape.record("slice_cols", std::move(out), {a}, [a, start, count](const Tensor& g, Gradients& grads) {
    Tensor da = matrix_like(a.value());
    view(da).middleCols(start, count) = view(g);
    grads.accumulate(a, std::move(da));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  const std::size_t cols = av.cols();
  Tensor out = Tensor::zeros(index.size(), cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[r]) + " out of range for " +
                       shape_string(av.shape()));
    }
    std::copy_n(av.values().begin() + index[r] * cols, cols, out.values().begin() + r * cols);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record("gather_rows", std::move(out), {a}, [a, idx = std::move(idx)](const Tensor& g, Gradients& grads) {
    Tensor da = matrix_like(a.value());
    const std::size_t cols = da.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = da.values().data() + idx[r] * cols;
      const double* src = g.values().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    grads.accumulate(a, std::move(da));
  });
}

Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t n) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  check_segments("segment_sum", av.rows(), segment, n);
  const std::size_t cols = av.cols();
  Tensor out = Tensor::zeros(n, cols);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double* dst = out.values().data() + segment[r] * cols;
    const double* src = av.values().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return tape.record("segment_sum", std::move(out), {a}, [a, seg = std::move(seg)](const Tensor& g, Gradients& grads) {
    Tensor da = matrix_like(a.value());
    const std::size_t cols = da.cols();
    for (std::size_t r = 0; r < seg.size(); ++r) {
      std::copy_n(g.values().begin() + seg[r] * cols, cols, da.values().begin() + r * cols);
    }
    grads.accumulate(a, std::move(da));
  });
}

Var segment_max(Var a, std::span<const std::size_t> segment, std::size_t n) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  check_segments("segment_max", av.rows(), segment, n);
  const std::size_t cols = av.cols();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> argmax(n * cols, kNone);
  Tensor out = Tensor::zeros(n, cols);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const std::size_t s = segment[r];
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = av[r * cols + c];
      std::size_t& best = argmax[s * cols + c];
      if (best == kNone || v > av[best * cols + c]) best = r;
    }
  }
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] != kNone) out[i] = av[argmax[i] * cols + i % cols];
  }
  return tape.record("segment_max", std::move(out), {a},
                     [a, argmax = std::move(argmax), cols](const Tensor& g, Gradients& grads) {
                       Tensor da = matrix_like(a.value());
                       for (std::size_t i = 0; i < argmax.size(); ++i) {
                         if (argmax[i] != kNone) da[argmax[i] * cols + i % cols] += g[i];
                       }
                       grads.accumulate(a, std::move(da));
                     });
}

Var segment_normalize(Var w, Var fallback, std::span<const std::size_t> segment, std::size_t n) {
  Tape& tape = tape_of({w, fallback});
  const Tensor& wv = w.value();
  const Tensor& fv = fallback.value();
  if (wv.cols() != 1 || !wv.same_shape(fv)) shape_error("segment_normalize", wv, fv);
  check_segments("segment_normalize", wv.rows(), segment, n);
  std::vector<double> wsum(n, 0.0);
  std::vector<double> fsum(n, 0.0);
  for (std::size_t r = 0; r < wv.rows(); ++r) {
    wsum[segment[r]] += wv[r];
    fsum[segment[r]] += fv[r];
  }
  std::vector<char> use_fallback(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    if (wsum[s] == 0.0) {
      use_fallback[s] = 1;
      if (fsum[s] == 0.0) {
        // Only reachable for segments without rows.
        bool has_rows = std::find(segment.begin(), segment.end(), s) != segment.end();
        if (has_rows) throw ValidationError("segment_normalize: segment " + std::to_string(s) + " has zero mass");
      }
    }
  }
  Tensor out = matrix_like(wv);
  for (std::size_t r = 0; r < wv.rows(); ++r) {
    const std::size_t s = segment[r];
    out[r] = use_fallback[s] ? fv[r] / fsum[s] : wv[r] / wsum[s];
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  const std::size_t out_id = tape.size();
  return tape.record(
      "segment_normalize", std::move(out), {w, fallback},
      [w, fallback, seg = std::move(seg), wsum = std::move(wsum), fsum = std::move(fsum),
       use_fallback = std::move(use_fallback), out_id, n](const Tensor& g, Gradients& grads) {
        const Tensor& y = w.tape()->value(out_id);
        std::vector<double> dot(n, 0.0);
        for (std::size_t r = 0; r < seg.size(); ++r) dot[seg[r]] += g[r] * y[r];
        Tensor dw = matrix_like(y);
        Tensor df = matrix_like(y);
        for (std::size_t r = 0; r < seg.size(); ++r) {
          const std::size_t s = seg[r];
          if (use_fallback[s]) {
            df[r] = (g[r] - dot[s]) / fsum[s];
          } else {
            dw[r] = (g[r] - dot[s]) / wsum[s];
          }
        }
        grads.accumulate(w, std::move(dw));
        grads.accumulate(fallback, std::move(df));
      });
}

Var topk_normalize(Var p, std::size_t k) {
  Tape& tape = tape_of({p});
  const Tensor& pv = p.value();
  const std::size_t cols = pv.cols();
  if (k == 0 || k > cols) {
    throw ValidationError("topk_normalize: k=" + std::to_string(k) + " with " + std::to_string(cols) + " columns");
  }
  Tensor out = matrix_like(pv);
  std::vector<char> kept(pv.size(), 0);
  std::vector<double> kept_sum(pv.rows(), 0.0);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < pv.rows(); ++r) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pv(r, x) > pv(r, y); });
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      kept[r * cols + order[i]] = 1;
      total += pv(r, order[i]);
    }
    // NaN flows on so the caller sees a non-finite loss.
    if (!(total > 0.0) && !std::isnan(total)) throw ValidationError("topk_normalize: kept mass is not positive");
    kept_sum[r] = total;
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = kept[r * cols + c] ? pv(r, c) / total : 0.0;
  }
  const std::size_t out_id = tape.size();
  return tape.record("topk_normalize", std::move(out), {p},
                     [p, kept = std::move(kept), kept_sum = std::move(kept_sum), out_id](const Tensor& g,
                                                                                      Gradients& grads) {
                       const Tensor& y = p.tape()->value(out_id);
                       const std::size_t cols = y.cols();
                       Tensor dp = matrix_like(y);
                       for (std::size_t r = 0; r < y.rows(); ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * y(r, c);
                         for (std::size_t c = 0; c < cols; ++c) {
                           if (kept[r * cols + c]) dp(r, c) = (g(r, c) - dot) / kept_sum[r];
                         }
                       }
                       grads.accumulate(p, std::move(dp));
                     });
}

Var xlogx(Var a, double factor) {
  Tape& tape = tape_of({a});
  Tensor out = a.value();
  for (double& v : out.values()) {
    if (v < 0.0) throw ValidationError("xlogx: negative input " + std::to_string(v));
    v = v > 0.0 ? v * std::log(factor * v) : 0.0;
  }
  return tape.record("xlogx", std::move(out), {a}, [a, factor](const Tensor& g, Gradients& grads) {
    const Tensor& av = a.value();
    Tensor da = g;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = av[i] > 0.0 ? da[i] * (std::log(factor * av[i]) + 1.0) : 0.0;
    grads.accumulate(a, std::move(da));
  });
}

Var sum(Var a) {
  Tape& tape = tape_of({a});
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return tape.record("sum", Tensor::scalar(total), {a}, [a](const Tensor& g, Gradients& grads) {
    grads.accumulate(a, Tensor(a.value().shape(), g.item()));
  });
}

Var mean_rows(Var a) {
  Tape& tape = tape_of({a});
  const Tensor& av = a.value();
  if (av.rows() == 0) throw ShapeError("mean_rows: no rows");
  Tensor out = Tensor::zeros(1, av.cols());
  view(out).row(0) = view(av).colwise().mean();
  return tape.record("mean_rows", std::move(out), {a}, [a](const Tensor& g, Gradients& grads) {
    Tensor da = matrix_like(a.value());
    const double inv = 1.0 / static_cast<double>(da.rows());
    view(da).rowwise() = view(g).row(0) * inv;
    grads.accumulate(a, std::move(da));
  });
}

Var dropout(Var a, double p, std::uint64_t seed) {
  Tape& tape = tape_of({a});
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: rate " + std::to_string(p) + " outside [0, 1)");
  if (p == 0.0) return scale(a, 1.0);
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.value().shape(), 0.0);
  for (double& m : mask.values()) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape.record("dropout", std::move(out), {a}, [a, mask = std::move(mask)](const Tensor& g, Gradients& grads) {
    Tensor da = g;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= mask[i];
    grads.accumulate(a, std::move(da));
  });
}

}  // namespace cfgmoe::ad
