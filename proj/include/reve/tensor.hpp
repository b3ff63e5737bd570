#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reve {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;
  bool requires_grad = false;
  // binding into the tape that recorded this tensor, if any
  std::uint64_t tape_epoch = 0;
  int node = -1;
};

}  // namespace detail

/// Dense row-major tensor of 64-bit reals. Copies are shallow: they share the
/// underlying buffer, which is how optimizers see parameter updates. Tensors
/// not bound to a tape are plain immutable values and safe to share across
/// threads.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double fill);
  static Tensor scalar(double v);
  /// Leaf with requires_grad set; backward() materializes its gradient.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }
  std::span<const double> values() const { return d_->values; }
  /// In-place access for optimizers and finite-difference probes.
  std::span<double> values_mut() { return d_->values; }
  /// The single element of a one-element tensor.
  double value() const;

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return d_->grad.has_value(); }
  std::span<const double> grad() const;
  void zero_grad() { d_->grad.reset(); }

  /// Deep value copy, detached from any tape, requires_grad off.
  Tensor detached() const;

  // internal: shared by the op implementations and the tape
  const std::shared_ptr<detail::TensorData>& impl() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

/// Records one forward computation for a single reverse sweep. At most one
/// tape is active per thread; ops record onto it when any input is tracked.
/// A tape is consumed by backward() and rejects a second sweep.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Reverse sweep from a one-element loss. Accumulates a gradient into
  /// every requires_grad leaf reachable from the loss.
  void backward(const Tensor& loss);
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

  // -- recording interface used by op implementations --
  using BackwardFn = std::function<void(std::span<const double> upstream, Tape& tape)>;
  /// Node id of `t` on this tape, creating a leaf node if `t` requires grad.
  /// Returns -1 for untracked tensors.
  int node_for(const Tensor& t);
  int record(std::vector<int> inputs, std::size_t out_size, BackwardFn fn);
  void attach(const Tensor& t, int node);
  void add_grad(int node, std::span<const double> g);

 private:
  struct Node {
    std::vector<int> inputs;
    std::size_t out_size = 0;
    BackwardFn backprop;                       // empty for leaves
    std::shared_ptr<detail::TensorData> leaf;  // set for leaves only
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;  // per-node adjoints during the sweep
  bool consumed_ = false;
  std::uint64_t epoch_ = 0;
};

// ------------------------------------------------------------------
// Differentiable operations. Binary elementwise ops broadcast by aligning
// trailing axes; only extent-1 axes may expand.
// ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // rejects zero denominators
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D x 2-D
Tensor transpose(const Tensor& a);                // 2-D

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // rejects non-positive operands
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis, bool keepdims);
Tensor mean(const Tensor& a, std::size_t axis, bool keepdims);

Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop);

/// Value-identical tensor detached from the tape; backward contributes zero.
Tensor stop_gradient(const Tensor& a);

/// max + log(sum(exp(x - max))) along `axis`; finite for finite input.
Tensor logsumexp(const Tensor& a, std::size_t axis, bool keepdims = false);

/// Zero-padded stride-1 convolution, input [N,C,H,W], kernel [OC,C,KH,KW],
/// bias [OC].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t pad);
/// 2x2 stride-2 max pooling; spatial extents must be even.
Tensor maxpool2(const Tensor& input);

}  // namespace reve
