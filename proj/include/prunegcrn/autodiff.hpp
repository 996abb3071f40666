#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prunegcrn::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// A dense row-major f64 tensor with a gradient slot.
///
/// `value` holds numel(shape) elements; `grad` too for leaves and recorded
/// nodes, and is empty on untracked intermediates. Nodes produced by
/// recorded ops carry a `backward` rule that pushes `grad` into their inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;
  std::function<void(const Node&)> backward;

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

using Var = std::shared_ptr<Node>;

Var leaf(Shape shape, std::vector<double> value, bool requires_grad, std::string name = {});
Var constant(Shape shape, std::vector<double> value);
Var zeros(Shape shape, bool requires_grad = false, std::string name = {});

/// Records ops in execution order for one reverse sweep. Single-threaded.
///
/// With gradients disabled nothing is retained, so a forward pass costs only
/// the live intermediates. `elements_emitted()` counts every op output element
/// regardless of mode.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var emit(Shape shape, std::vector<double> value, bool needs_grad,
           std::function<void(const Node&)> backward);

  /// Reverse sweep from a scalar root. Leaf gradients accumulate.
  void backward(const Var& root);

  void clear();
  std::size_t size() const { return nodes_.size(); }
  std::size_t elements_emitted() const { return elements_emitted_; }

  bool any_requires_grad(std::initializer_list<const Var*> inputs) const;

 private:
  bool grad_enabled_;
  std::vector<Var> nodes_;
  std::size_t elements_emitted_ = 0;
};

// Linear algebra.
Var matmul(Tape& t, const Var& a, const Var& b);
Var transpose(Tape& t, const Var& a);
/// S[n×n] applied to every [n×c] slice of x[...×n×c].
Var batched_left_matmul(Tape& t, const Var& s, const Var& x);
/// Per-node filter: out[..., i, :] = x[..., i, :] · theta[i] with theta[n×c×f].
Var node_matmul(Tape& t, const Var& x, const Var& theta);

// Elementwise. Binary ops broadcast `b` over the leading axes of `a`; b's
// shape must equal a trailing suffix of a's shape.
Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& a, double s);
Var add_scalar(Tape& t, const Var& a, double s);
Var sigmoid(Tape& t, const Var& a);
Var tanh(Tape& t, const Var& a);
Var relu(Tape& t, const Var& a);
Var abs(Tape& t, const Var& a);

/// Softmax over the last axis, stabilized by subtracting the row max.
Var rowsoftmax(Tape& t, const Var& a);

Var concat_last(Tape& t, const Var& a, const Var& b);
Var slice_last(Tape& t, const Var& a, std::size_t begin, std::size_t length);
Var reshape(Tape& t, const Var& a, Shape shape);

Var mean_all(Tape& t, const Var& a);
Var sum_all(Tape& t, const Var& a);

/// out_i = 1 if raw_i > 0 else 0. The backward pass is a windowed
/// straight-through estimator: the incoming gradient is copied to raw_i when
/// |raw_i| <= window and dropped otherwise.
Var binary_clamp_ste(Tape& t, const Var& raw, double window = 1.0);

/// out[..., i, :] = w_i * x[..., i, :] + (1 - w_i) * fill[i, :], with
/// x[...×n×c], w[n], fill[n×c].
Var masked_blend(Tape& t, const Var& x, const Var& w, const Var& fill);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar computation against central
/// differences (f(x+eps) - f(x-eps)) / 2eps for every element of `params`.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// `f` must rebuild its graph on the tape it is handed. Parameters that feed a
/// binary_clamp_ste must not be listed; its surrogate is not a derivative.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<const Var> params,
                           double eps = 1e-5, double tol = 1e-6, double floor = 1e-6);

}  // namespace prunegcrn::ad
