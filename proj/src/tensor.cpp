#include "reve/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tensor_internal.hpp"

namespace reve {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ------------------------------------------------------------------ Tensor

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match buffer of " +
                                std::to_string(values.size()) + " values");
  }
  d_ = std::make_shared<detail::TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double fill) {
  std::vector<double> v(shape_numel(shape), fill);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

double Tensor::value() const {
  if (size() != 1) {
    throw std::invalid_argument("Tensor::value: tensor " + shape_str(shape()) + " is not a scalar");
  }
  return d_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  d_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!d_->grad) throw std::runtime_error("Tensor::grad: gradient not materialized");
  return *d_->grad;
}

Tensor Tensor::detached() const { return Tensor(d_->shape, d_->values); }

// -------------------------------------------------------------------- Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_tape_epoch = 0;
}  // namespace

Tape::Tape() {
  if (g_active_tape != nullptr) {
    throw std::runtime_error("Tape: another tape is already active on this thread");
  }
  epoch_ = ++g_tape_epoch;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

int Tape::node_for(const Tensor& t) {
  const auto& d = t.impl();
  if (d->tape_epoch == epoch_ && d->node >= 0) return d->node;
  if (!d->requires_grad) return -1;
  Node n;
  n.out_size = d->values.size();
  n.leaf = d;
  nodes_.push_back(std::move(n));
  d->tape_epoch = epoch_;
  d->node = static_cast<int>(nodes_.size()) - 1;
  return d->node;
}

int Tape::record(std::vector<int> inputs, std::size_t out_size, BackwardFn fn) {
  Node n;
  n.inputs = std::move(inputs);
  n.out_size = out_size;
  n.backprop = std::move(fn);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::attach(const Tensor& t, int node) {
  t.impl()->tape_epoch = epoch_;
  t.impl()->node = node;
}

void Tape::add_grad(int node, std::span<const double> g) {
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(nodes_[static_cast<std::size_t>(node)].out_size, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("Tape::backward: tape already consumed");
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("Tape::backward: loss is not a scalar");
  }
  const auto& d = loss.impl();
  if (d->tape_epoch != epoch_ || d->node < 0) {
    throw std::invalid_argument("Tape::backward: loss is detached from this tape");
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), {});
  grads_[static_cast<std::size_t>(d->node)] = {1.0};
  for (int i = d->node; i >= 0; --i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop) {
      n.backprop(g, *this);
    } else if (n.leaf) {
      auto& leaf_grad = n.leaf->grad;
      if (!leaf_grad) leaf_grad.emplace(n.leaf->values.size(), 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) (*leaf_grad)[k] += g[k];
    }
    g.clear();
    g.shrink_to_fit();
  }
  grads_.clear();
}

// ---------------------------------------------------------------- helpers

namespace detail_ops {

std::vector<std::size_t> row_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                  shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

BcastMap make_map(const Shape& out, const Shape& operand) {
  BcastMap m;
  m.out_shape = out;
  m.op_stride.assign(out.size(), 0);
  const auto strides = row_strides(operand);
  const std::size_t offset = out.size() - operand.size();
  for (std::size_t i = 0; i < operand.size(); ++i) {
    if (operand[i] != 1) m.op_stride[offset + i] = strides[i];
  }
  return m;
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor operand");
}

}  // namespace detail_ops

using detail_ops::BcastMap;
using detail_ops::broadcast_shape;
using detail_ops::make_map;
using detail_ops::require_defined;

namespace {

// Elementwise binary op with broadcasting; dfda/dfdb are the local partials
// evaluated on the mapped operand values.
template <class Fwd, class Dfda, class Dfdb>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dfda dfda,
                 Dfdb dfdb) {
  const Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  const BcastMap ma = make_map(out_shape, a.shape());
  const BcastMap mb = make_map(out_shape, b.shape());
  const std::size_t n = shape_numel(out_shape);
  const bool a_direct = detail_ops::identity_map(out_shape, a.shape());
  const bool b_direct = detail_ops::identity_map(out_shape, b.shape());

  std::vector<double> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_direct ? i : ma.map(i)];
    const double y = bv[b_direct ? i : mb.map(i)];
    out[i] = fwd(x, y, name);
  }
  Tensor result(out_shape, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  const int nb = tape->node_for(b);
  if (na < 0 && nb < 0) return result;

  auto ad = a.impl();
  auto bd = b.impl();
  const int node = tape->record({na, nb}, n, [=](std::span<const double> up, Tape& t) {
    std::vector<double> ga, gb;
    if (na >= 0) ga.assign(ad->values.size(), 0.0);
    if (nb >= 0) gb.assign(bd->values.size(), 0.0);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const std::size_t ia = a_direct ? i : ma.map(i);
      const std::size_t ib = b_direct ? i : mb.map(i);
      const double x = ad->values[ia];
      const double y = bd->values[ib];
      if (na >= 0) ga[ia] += up[i] * dfda(x, y);
      if (nb >= 0) gb[ib] += up[i] * dfdb(x, y);
    }
    if (na >= 0) t.add_grad(na, ga);
    if (nb >= 0) t.add_grad(nb, gb);
  });
  tape->attach(result, node);
  return result;
}

template <class Fwd, class Dfdx>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dfdx dfdx) {
  require_defined(name, a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tensor result(a.shape(), std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  auto ad = a.impl();
  auto rd = result.impl();
  const int node = tape->record({na}, av.size(), [=](std::span<const double> up, Tape& t) {
    std::vector<double> g(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) g[i] = up[i] * dfdx(ad->values[i], rd->values[i]);
    t.add_grad(na, g);
  });
  tape->attach(result, node);
  return result;
}

}  // namespace

// --------------------------------------------------------------- binary ops

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  return binary_op(
      "add", a, b, [](double x, double y, const char*) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  return binary_op(
      "sub", a, b, [](double x, double y, const char*) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  return binary_op(
      "mul", a, b, [](double x, double y, const char*) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined("div", a);
  require_defined("div", b);
  return binary_op(
      "div", a, b,
      [](double x, double y, const char* op) {
        if (y == 0.0) throw std::domain_error(std::string(op) + ": zero divisor");
        return x / y;
      },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------- unary ops

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a,
      [](double x) {
        if (x <= 0.0) throw std::domain_error("log: non-positive operand " + std::to_string(x));
        return std::log(x);
      },
      [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor stop_gradient(const Tensor& a) {
  require_defined("stop_gradient", a);
  return a.detached();
}

}  // namespace reve
