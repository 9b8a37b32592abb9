#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "amdc/tensor.hpp"

namespace amdc::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a node's backward rule sees. `input_grads[i]` is null when input i
/// does not require a gradient; otherwise the rule accumulates into it.
struct BackwardCtx {
  const Tensor& grad;
  const Tensor& output;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardCtx&)>;

/// Gradients of a scalar root with respect to the leaves that asked for them.
/// A missing entry means the gradient is identically zero.
class GradMap {
 public:
  const Tensor* find(const Var& leaf) const;
  /// Gradient of `leaf`, or zeros of its shape when absent.
  Tensor get(const Var& leaf) const;
  bool contains(const Var& leaf) const { return find(leaf) != nullptr; }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Append-only record of a computation. Nodes are appended in evaluation
/// order, so reverse append order is a valid reverse topological order.
///
/// backward() does not consume the tape: it can be called again (for example
/// on a different root) and always starts from fresh gradient buffers. A tape
/// must only be used from one thread at a time.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `fn` is dropped when recording is disabled or no
  /// input needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

  GradMap backward(const Var& root) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }

  /// Multiply-add work of the recorded ops, two flops per pair.
  std::uint64_t flops() const noexcept { return flops_; }
  void add_flops(std::uint64_t n) noexcept { flops_ += n; }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string_view op;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  std::uint64_t flops_ = 0;
};

/// Disables backward recording on a tape for the guard's lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.grad_enabled()) {
    tape_.set_grad_enabled(false);
  }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// Elementwise. Shapes must match exactly; there is no broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// x + s where s has shape [1].
Var add_scalar_var(const Var& x, const Var& s);

Var matmul(const Var& a, const Var& b);

/// Adds b (length = x.dim(axis)) along `axis`. Explicit, not broadcasting.
Var bias_add(const Var& x, const Var& b, std::size_t axis);

/// Cross-correlation of x[C_in,H,W] with k[C_out,C_in,kh,kw].
Var conv2d(const Var& x, const Var& k, std::size_t stride = 1, std::size_t pad = 0);

Var sigmoid(const Var& x);
Var gelu(const Var& x);
Var relu(const Var& x);
Var softmax(const Var& x, std::size_t axis);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(const Var& x, std::size_t axis, const Var& gamma, const Var& beta,
               double eps = kLayerNormEps);

Var reshape(const Var& x, const Shape& shape);
Var permute(const Var& x, std::span<const std::size_t> order);
Var permute(const Var& x, std::initializer_list<std::size_t> order);
/// [C,H,W] -> [C, H/w, W/w, w, w].
Var window_partition(const Var& x, std::size_t window);
/// Inverse of window_partition.
Var window_merge(const Var& x, std::size_t window);
/// Cyclic shift: out[(i + offset) mod n] = x[i] along `axis`.
Var roll(const Var& x, std::size_t axis, std::ptrdiff_t offset);

enum class ResampleDir { up, down };
/// Acts on the last two axes: nearest-neighbour replication (up) or average
/// pooling (down) by `factor`.
Var resample(const Var& x, ResampleDir dir, std::size_t factor);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);

Var sum(const Var& x);
Var mean(const Var& x);
/// mean((a - b)^2).
Var mse(const Var& a, const Var& b);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline constexpr double kGradCheckAbsFloor = 1e-8;

/// Compares tape gradients of a scalar function against central differences
/// (f(x+eps) - f(x-eps)) / 2eps on every coordinate of every input. A
/// coordinate whose absolute discrepancy is below 1e-8 counts as exact;
/// otherwise its error is |analytic - numeric| / max(|analytic|, |numeric|).
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           double eps = 1e-6);

}  // namespace amdc::ad
