#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "reve/tensor.hpp"
#include "tensor_internal.hpp"

namespace reve {

using detail_ops::make_map;
using detail_ops::require_defined;
using detail_ops::row_strides;

namespace {

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
  }
}

void require_axis(const char* op, const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(t.shape()));
  }
}

// Decomposes a shape around `axis` into (outer, extent, inner) so that
// flat = (o * extent + e) * inner + i.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdims) {
  Shape out = shape;
  if (keepdims) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  Tensor result(Shape{m, n}, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  const int nb = tape->node_for(b);
  if (na < 0 && nb < 0) return result;
  auto ad = a.impl();
  auto bd = b.impl();
  const int node = tape->record({na, nb}, m * n, [=](std::span<const double> up, Tape& t) {
    if (na >= 0) {
      // dA = G * B^T
      std::vector<double> ga(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += up[i * n + j] * bd->values[p * n + j];
          ga[i * k + p] = acc;
        }
      t.add_grad(na, ga);
    }
    if (nb >= 0) {
      // dB = A^T * G
      std::vector<double> gb(k * n, 0.0);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += ad->values[i * k + p] * up[i * n + j];
          gb[p * n + j] = acc;
        }
      t.add_grad(nb, gb);
    }
  });
  tape->attach(result, node);
  return result;
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tensor result(Shape{n, m}, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const int node = tape->record({na}, m * n, [=](std::span<const double> up, Tape& t) {
    std::vector<double> g(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] = up[j * m + i];
    t.add_grad(na, g);
  });
  tape->attach(result, node);
  return result;
}

// -------------------------------------------------------------- reductions

namespace {

Tensor full_reduce(const char* name, const Tensor& a, double denom) {
  auto av = a.values();
  double acc = 0.0;
  for (double v : av) acc += v;
  acc /= denom;
  Tensor result = Tensor::scalar(acc);

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const std::size_t n = av.size();
  const int node = tape->record({na}, 1, [=](std::span<const double> up, Tape& t) {
    std::vector<double> g(n, up[0] / denom);
    t.add_grad(na, g);
  });
  tape->attach(result, node);
  (void)name;
  return result;
}

Tensor axis_reduce(const char* name, const Tensor& a, std::size_t axis, bool keepdims,
                   double denom) {
  require_axis(name, a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  auto av = a.values();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  if (denom != 1.0)
    for (double& v : out) v /= denom;
  Tensor result(reduced_shape(a.shape(), axis, keepdims), std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const std::size_t n = av.size();
  const int node =
      tape->record({na}, result.size(), [=](std::span<const double> up, Tape& t) {
        std::vector<double> g(n);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
              g[(o * s.extent + e) * s.inner + i] = up[o * s.inner + i] / denom;
        t.add_grad(na, g);
      });
  tape->attach(result, node);
  return result;
}

}  // namespace

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  return full_reduce("sum", a, 1.0);
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  return full_reduce("mean", a, static_cast<double>(a.size()));
}

Tensor sum(const Tensor& a, std::size_t axis, bool keepdims) {
  require_defined("sum", a);
  return axis_reduce("sum", a, axis, keepdims, 1.0);
}

Tensor mean(const Tensor& a, std::size_t axis, bool keepdims) {
  require_defined("mean", a);
  require_axis("mean", a, axis);
  return axis_reduce("mean", a, axis, keepdims, static_cast<double>(a.shape()[axis]));
}

// -------------------------------------------------------------- shape ops

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  require_defined("broadcast_to", a);
  if (target.size() < a.rank()) {
    throw std::invalid_argument("broadcast_to: cannot drop axes, " + shape_str(a.shape()) +
                                " to " + shape_str(target));
  }
  const std::size_t offset = target.size() - a.rank();
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.shape()[i] != target[offset + i] && a.shape()[i] != 1) {
      throw std::invalid_argument("broadcast_to: shape mismatch " + shape_str(a.shape()) +
                                  " to " + shape_str(target));
    }
  }
  const auto m = make_map(target, a.shape());
  const std::size_t n = shape_numel(target);
  auto av = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[m.map(i)];
  Tensor result(target, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const std::size_t in_size = av.size();
  const int node = tape->record({na}, n, [=](std::span<const double> up, Tape& t) {
    std::vector<double> g(in_size, 0.0);
    for (std::size_t i = 0; i < up.size(); ++i) g[m.map(i)] += up[i];
    t.add_grad(na, g);
  });
  tape->attach(result, node);
  return result;
}

Tensor reshape(const Tensor& a, const Shape& target) {
  require_defined("reshape", a);
  if (shape_numel(target) != a.size()) {
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " to " + shape_str(target));
  }
  Tensor result(target, std::vector<double>(a.values().begin(), a.values().end()));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const int node = tape->record({na}, a.size(), [=](std::span<const double> up, Tape& t) {
    t.add_grad(na, up);
  });
  tape->attach(result, node);
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  for (const Tensor& p : parts) require_defined("concat", p);
  const Shape& first = parts[0].shape();
  require_axis("concat", parts[0], axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) {
      throw std::invalid_argument("concat: rank mismatch " + shape_str(first) + " vs " +
                                  shape_str(p.shape()));
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_str(first) + " vs " +
                                    shape_str(p.shape()));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }

  const AxisSplit so = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t axis_offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pe = p.shape()[axis];
    auto pv = p.values();
    for (std::size_t o = 0; o < so.outer; ++o)
      for (std::size_t e = 0; e < pe; ++e)
        for (std::size_t i = 0; i < so.inner; ++i)
          out[(o * so.extent + axis_offset + e) * so.inner + i] =
              pv[(o * pe + e) * so.inner + i];
    axis_offset += pe;
  }
  Tensor result(out_shape, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  std::vector<int> in_nodes;
  std::vector<std::size_t> extents;
  std::vector<std::size_t> sizes;
  bool any = false;
  for (const Tensor& p : parts) {
    const int np = tape->node_for(p);
    in_nodes.push_back(np);
    extents.push_back(p.shape()[axis]);
    sizes.push_back(p.size());
    any = any || np >= 0;
  }
  if (!any) return result;
  const int node =
      tape->record(in_nodes, result.size(), [=](std::span<const double> up, Tape& t) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < in_nodes.size(); ++pi) {
          const std::size_t pe = extents[pi];
          if (in_nodes[pi] >= 0) {
            std::vector<double> g(sizes[pi]);
            for (std::size_t o = 0; o < so.outer; ++o)
              for (std::size_t e = 0; e < pe; ++e)
                for (std::size_t i = 0; i < so.inner; ++i)
                  g[(o * pe + e) * so.inner + i] =
                      up[(o * so.extent + off + e) * so.inner + i];
            t.add_grad(in_nodes[pi], g);
          }
          off += pe;
        }
      });
  tape->attach(result, node);
  return result;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop) {
  require_defined("slice", a);
  require_axis("slice", a, axis);
  if (start >= stop || stop > a.shape()[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(stop) + ") invalid for shape " +
                                shape_str(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  const std::size_t width = stop - start;
  Shape out_shape = a.shape();
  out_shape[axis] = width;
  auto av = a.values();
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < width; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[(o * width + e) * s.inner + i] = av[(o * s.extent + start + e) * s.inner + i];
  Tensor result(out_shape, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  const std::size_t in_size = a.size();
  const int node =
      tape->record({na}, result.size(), [=](std::span<const double> up, Tape& t) {
        std::vector<double> g(in_size, 0.0);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < width; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
              g[(o * s.extent + start + e) * s.inner + i] = up[(o * width + e) * s.inner + i];
        t.add_grad(na, g);
      });
  tape->attach(result, node);
  return result;
}

// --------------------------------------------------------------- logsumexp

Tensor logsumexp(const Tensor& a, std::size_t axis, bool keepdims) {
  require_defined("logsumexp", a);
  require_axis("logsumexp", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  auto av = a.values();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e)
        m = std::max(m, av[(o * s.extent + e) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e)
        acc += std::exp(av[(o * s.extent + e) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(acc);
    }
  }
  Tensor result(reduced_shape(a.shape(), axis, keepdims), std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int na = tape->node_for(a);
  if (na < 0) return result;
  auto ad = a.impl();
  auto rd = result.impl();
  const std::size_t n = a.size();
  const int node =
      tape->record({na}, result.size(), [=](std::span<const double> up, Tape& t) {
        // d/dx_e = softmax along the axis
        std::vector<double> g(n);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const double lse = rd->values[o * s.inner + i];
            const double u = up[o * s.inner + i];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t idx = (o * s.extent + e) * s.inner + i;
              g[idx] = u * std::exp(ad->values[idx] - lse);
            }
          }
        t.add_grad(na, g);
      });
  tape->attach(result, node);
  return result;
}

}  // namespace reve
