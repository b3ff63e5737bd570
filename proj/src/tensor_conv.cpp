#include <stdexcept>
#include <vector>

#include "reve/tensor.hpp"
#include "tensor_internal.hpp"

namespace reve {

using detail_ops::require_defined;

// Direct convolution; images here are at most 32x32 so no im2col.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t pad) {
  require_defined("conv2d", input);
  require_defined("conv2d", kernel);
  require_defined("conv2d", bias);
  if (input.rank() != 4 || kernel.rank() != 4 || bias.rank() != 1) {
    throw std::invalid_argument("conv2d: expected input [N,C,H,W], kernel [OC,C,KH,KW], bias "
                                "[OC]; got " +
                                shape_str(input.shape()) + ", " + shape_str(kernel.shape()) +
                                ", " + shape_str(bias.shape()));
  }
  const std::size_t n = input.shape()[0], ic = input.shape()[1];
  const std::size_t h = input.shape()[2], w = input.shape()[3];
  const std::size_t oc = kernel.shape()[0], kc = kernel.shape()[1];
  const std::size_t kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kc != ic || bias.shape()[0] != oc) {
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(input.shape()) + " vs " +
                                shape_str(kernel.shape()));
  }
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = h + 2 * pad - kh + 1;
  const std::size_t ow = w + 2 * pad - kw + 1;

  auto in = input.values();
  auto kv = kernel.values();
  auto bv = bias.values();
  std::vector<double> out(n * oc * oh * ow, 0.0);
  const auto in_at = [&](std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return in[((b * ic + c) * h + y) * w + x];
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bv[o];
          for (std::size_t c = 0; c < ic; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += in_at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       kv[((o * ic + c) * kh + ky) * kw + kx];
              }
            }
          out[((b * oc + o) * oh + y) * ow + x] = acc;
        }
  Tensor result(Shape{n, oc, oh, ow}, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int ni = tape->node_for(input);
  const int nk = tape->node_for(kernel);
  const int nb = tape->node_for(bias);
  if (ni < 0 && nk < 0 && nb < 0) return result;
  auto ind = input.impl();
  auto knd = kernel.impl();
  const int node =
      tape->record({ni, nk, nb}, result.size(), [=](std::span<const double> up, Tape& t) {
        std::vector<double> gi, gk, gb;
        if (ni >= 0) gi.assign(n * ic * h * w, 0.0);
        if (nk >= 0) gk.assign(oc * ic * kh * kw, 0.0);
        if (nb >= 0) gb.assign(oc, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t x = 0; x < ow; ++x) {
                const double g = up[((b * oc + o) * oh + y) * ow + x];
                if (g == 0.0) continue;
                if (nb >= 0) gb[o] += g;
                for (std::size_t c = 0; c < ic; ++c)
                  for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(pad);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      const std::size_t in_idx =
                          ((b * ic + c) * h + static_cast<std::size_t>(iy)) * w +
                          static_cast<std::size_t>(ix);
                      const std::size_t k_idx = ((o * ic + c) * kh + ky) * kw + kx;
                      if (ni >= 0) gi[in_idx] += g * knd->values[k_idx];
                      if (nk >= 0) gk[k_idx] += g * ind->values[in_idx];
                    }
                  }
              }
        if (ni >= 0) t.add_grad(ni, gi);
        if (nk >= 0) t.add_grad(nk, gk);
        if (nb >= 0) t.add_grad(nb, gb);
      });
  tape->attach(result, node);
  return result;
}

Tensor maxpool2(const Tensor& input) {
  require_defined("maxpool2", input);
  if (input.rank() != 4) {
    throw std::invalid_argument("maxpool2: expected [N,C,H,W], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.shape()[0], c = input.shape()[1];
  const std::size_t h = input.shape()[2], w = input.shape()[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2: odd spatial extents in " + shape_str(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  auto in = input.values();
  std::vector<double> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t base = (b * c + ch) * h;
          std::size_t best = (base + 2 * y) * w + 2 * x;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (base + 2 * y + dy) * w + 2 * x + dx;
              if (in[idx] > in[best]) best = idx;
            }
          const std::size_t o_idx = ((b * c + ch) * oh + y) * ow + x;
          out[o_idx] = in[best];
          (*argmax)[o_idx] = best;
        }
  Tensor result(Shape{n, c, oh, ow}, std::move(out));

  Tape* tape = Tape::active();
  if (!tape) return result;
  const int ni = tape->node_for(input);
  if (ni < 0) return result;
  const std::size_t in_size = input.size();
  const int node =
      tape->record({ni}, result.size(), [=](std::span<const double> up, Tape& t) {
        std::vector<double> g(in_size, 0.0);
        for (std::size_t i = 0; i < up.size(); ++i) g[(*argmax)[i]] += up[i];
        t.add_grad(ni, g);
      });
  tape->attach(result, node);
  return result;
}

}  // namespace reve
