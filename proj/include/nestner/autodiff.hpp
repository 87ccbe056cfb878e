#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nestner/tensor.hpp"

namespace nestner {

/// A named trainable tensor. Tapes refer to parameters by address, so a
/// parameter must not move while a tape that uses it is alive.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
};

class Tape;

/// Propagates the gradient of an op's output into its inputs via
/// Tape::accumulate.
using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

/// Define-by-run gradient tape. Every differentiable op appends one node;
/// backward() replays the nodes in exact reverse order. A tape is
/// single-threaded and is meant to live for one training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that receives no gradient.
  Var constant(Tensor value);
  /// Records a constant by reference; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Records a parameter leaf. Repeated calls with the same parameter return
  /// the same node, so its gradient accumulates in one place.
  Var leaf(const Parameter& param);

  /// Appends an op node. `backward` may be empty for non-differentiable ops.
  /// The node requires a gradient iff any parent does. Throws NonFinite if
  /// `value` contains NaN or Inf.
  Var push(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.index];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1×1 root and replays the tape backward.
  void backward(Var root);

  /// Adds `g` into the gradient slot of `v`; ignored for constants.
  void accumulate(Var v, const Tensor& g);
  /// Mutable view of the gradient slot of `v`, zero-initialized on first
  /// use; empty for nodes that need no gradient.
  std::span<double> grad_buffer(Var v);

  /// Accumulated gradient of a node; zeros if nothing flowed into it.
  Tensor grad(Var v) const;
  /// Gradient of a parameter leaf; zeros of the parameter's shape if the
  /// parameter was never used on this tape.
  Tensor gradient(const Parameter& param) const;
  bool uses(const Parameter& param) const { return leaves_.count(&param) != 0; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> leaves_;
};

// Differentiable ops. None of them mutates its inputs.

/// [r×k]·[k×c] → [r×c].
Var matmul(Tape& t, Var a, Var b);
/// Elementwise sum; shapes must match exactly or one side must be 1×1.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// Elementwise product; shapes must match exactly or one side must be 1×1.
Var mul(Tape& t, Var a, Var b);
/// Adds a 1×c row to every row of an r×c tensor.
Var add_row(Tape& t, Var x, Var row);
Var scale(Tape& t, Var x, double factor);
Var tanh(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var relu(Tape& t, Var x);
/// x ⊙ mask with a constant mask (dropout uses an already-scaled mask).
Var dropout_mask_apply(Tape& t, Var x, const Tensor& mask);
/// Row-wise softmax with max subtraction; requires at least two columns.
Var softmax_rows(Tape& t, Var x);
/// Sum of all elements → 1×1.
Var sum(Tape& t, Var x);
/// Row `r` of x as a 1×c tensor.
Var row(Tape& t, Var x, std::size_t r);
/// Columns [offset, offset+count) of x.
Var slice_cols(Tape& t, Var x, std::size_t offset, std::size_t count);
/// Stacks tensors with equal column counts on top of each other.
Var concat_rows(Tape& t, std::span<const Var> parts);
/// Joins two tensors with equal row counts side by side.
Var concat_cols(Tape& t, Var a, Var b);
/// Picks rows of `table` by index; the backward pass scatter-adds.
Var gather_rows(Tape& t, Var table, std::span<const std::size_t> indices);

/// Non-recording softmax used by inference code and tests.
Tensor softmax_rows(const Tensor& x);

/// Central difference stencils. ThreePoint is (f(x+h) − f(x−h))/2h. FivePoint
/// has O(h^4) truncation error and suits larger steps on deep compositions,
/// where tiny gradient entries need a step well above the rounding floor.
enum class Stencil { ThreePoint, FivePoint };

/// Maximum elementwise relative error between the tape gradient and central
/// finite differences, using max(|a|, |b|, 1e-8) as the denominator.
/// Throws NonFinite if f produces NaN or Inf.
double check_gradient(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps = 1e-5,
                      Stencil stencil = Stencil::ThreePoint);

/// Same check over every element of several parameters; f rebuilds the
/// computation on the tape it is given and returns a 1×1 result. Parameter
/// values are restored before returning.
double check_gradient(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double eps = 1e-5,
                      Stencil stencil = Stencil::ThreePoint);

}  // namespace nestner
