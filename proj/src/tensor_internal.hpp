#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "reve/tensor.hpp"

namespace reve::detail_ops {

std::vector<std::size_t> row_strides(const Shape& s);

// Maps flat indices in a broadcast result back to operand flat indices.
struct BcastMap {
  Shape out_shape;
  std::vector<std::size_t> op_stride;  // aligned to out rank, 0 on expanded axes

  std::size_t map(std::size_t flat) const {
    std::size_t idx = 0;
    for (std::size_t ax = out_shape.size(); ax-- > 0;) {
      idx += (flat % out_shape[ax]) * op_stride[ax];
      flat /= out_shape[ax];
    }
    return idx;
  }
};

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b);
BcastMap make_map(const Shape& out, const Shape& operand);
inline bool identity_map(const Shape& out, const Shape& operand) { return out == operand; }

void require_defined(const char* op, const Tensor& t);

}  // namespace reve::detail_ops
