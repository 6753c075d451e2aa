#pragma once

// Spatial and recurrent building blocks on top of tensor.hpp: HWC
// convolution as per-tap matrix products, nearest-neighbour upsampling and the GRU cell.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "raliflow/tensor.hpp"

namespace raliflow::ad {

namespace detail {

struct ConvGeometry {
  std::size_t h, w, cin, k, cout, stride, pad, ho, wo;
};

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Visits every (tap, output row) pair with its valid output column range
// [lo, hi) and the matching input row / first input column.
template <class F>
void for_each_tap_row(const ConvGeometry& g, F&& f) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto p = static_cast<std::ptrdiff_t>(g.pad);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  const auto wo = static_cast<std::ptrdiff_t>(g.wo);
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const auto dx = static_cast<std::ptrdiff_t>(kx) - p;
      const std::ptrdiff_t lo = dx >= 0 ? 0 : (-dx + s - 1) / s;
      const std::ptrdiff_t hi = std::min(wo, (w - 1 - dx) / s + 1);
      if (hi <= lo) continue;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) - p;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        f(ky * g.k + kx, oy, static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo),
          static_cast<std::size_t>(iy * w + lo * s + dx));
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of an [H, W, Cin] map with [k, k, Cin, Cout] kernels,
/// zero "same" padding, stride dividing H and W. Output [H/s, W/s, Cout].
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride = 1) {
  if (input.ndim() != 3 || kernels.ndim() != 4 || kernels.dim(0) != kernels.dim(1) ||
      kernels.dim(2) != input.dim(2) || kernels.dim(0) % 2 == 0 || stride == 0 ||
      input.dim(0) % stride != 0 || input.dim(1) % stride != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d input " + shape_str(input.shape()) + " kernels " +
                    shape_str(kernels.shape()) + " stride " + std::to_string(stride));
  }
  const detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(3),
                               stride,       kernels.dim(0) / 2, input.dim(0) / stride,
                               input.dim(1) / stride};
  const auto ci = static_cast<Eigen::Index>(g.cin);
  const auto co = static_cast<Eigen::Index>(g.cout);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(g.stride * g.cin));
  std::vector<double> v(g.ho * g.wo * g.cout, 0.0);
  const double* x = input.data().data();
  const double* kw = kernels.data().data();
  detail::for_each_tap_row(g, [&](std::size_t tap, std::size_t oy, std::size_t lo, std::size_t n,
                                  std::size_t in_row) {
    const auto rows = static_cast<Eigen::Index>(n);
    detail::MutMap(v.data() + (oy * g.wo + lo) * g.cout, rows, co).noalias() +=
        detail::StridedMap(x + in_row * g.cin, rows, ci, in_stride) *
        detail::ConstMap(kw + tap * g.cin * g.cout, ci, co);
  });
  return make_result({g.ho, g.wo, g.cout}, std::move(v), {input, kernels}, [g, ci, co](detail::Node& self) {
    const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(g.stride * g.cin));
    const double* dy = self.grad.data();
    const double* x = self.parents[0]->value.data();
    const double* kw = self.parents[1]->value.data();
    double* gk = detail::wants(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
    double* gx = detail::wants(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
    detail::for_each_tap_row(g, [&](std::size_t tap, std::size_t oy, std::size_t lo, std::size_t n,
                                    std::size_t in_row) {
      const auto rows = static_cast<Eigen::Index>(n);
      const detail::ConstMap dyr(dy + (oy * g.wo + lo) * g.cout, rows, co);
      if (gk) {
        detail::MutMap(gk + tap * g.cin * g.cout, ci, co).noalias() +=
            detail::StridedMap(x + in_row * g.cin, rows, ci, in_stride).transpose() * dyr;
      }
      if (gx) {
        detail::MutStridedMap(gx + in_row * g.cin, rows, ci, in_stride).noalias() +=
            dyr * detail::ConstMap(kw + tap * g.cin * g.cout, ci, co).transpose();
      }
    });
  });
}

/// [H, W, C] -> [2H, 2W, C], each cell copied to a 2x2 block.
inline Tensor upsample2x_nearest(const Tensor& input) {
  if (input.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "upsample2x expects [H,W,C]");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  std::vector<double> v(4 * h * w * c);
  const auto x = input.data();
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t xx = 0; xx < 2 * w; ++xx)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(((y / 2) * w + xx / 2) * c), c,
                  v.begin() + static_cast<std::ptrdiff_t>((y * 2 * w + xx) * c));
  return make_result({2 * h, 2 * w, c}, std::move(v), {input}, [h, w, c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        for (std::size_t k = 0; k < c; ++k)
          g[((y / 2) * w + xx / 2) * c + k] += self.grad[(y * 2 * w + xx) * c + k];
  });
}

/// Gate weights act on the concatenation [x, h]; shapes [in + hidden, hidden].
struct GruParams {
  Tensor w_z, b_z;
  Tensor w_r, b_r;
  Tensor w_h, b_h;

  std::size_t hidden() const { return w_z.dim(1); }
  std::size_t input_width() const { return w_z.dim(0) - hidden(); }
};

/// Batched GRU step for [N, hidden] state and [N, in] input:
///   z = sigmoid(W_z [x, h]),  r = sigmoid(W_r [x, h]),
///   h~ = tanh(W_h [x, r*h]),  h' = (1 - z) * h + z * h~.
inline Tensor gru_cell(const Tensor& h, const Tensor& x, const GruParams& p) {
  if (h.ndim() != 2 || x.ndim() != 2 || h.dim(0) != x.dim(0) || h.dim(1) != p.hidden() ||
      x.dim(1) != p.input_width()) {
    throw Error(ErrorCode::ShapeMismatch,
                "gru_cell h " + shape_str(h.shape()) + " x " + shape_str(x.shape()));
  }
  const Tensor xh = concat({x, h}, 1);
  const Tensor z = sigmoid(add(matmul(xh, p.w_z), p.b_z));
  const Tensor r = sigmoid(add(matmul(xh, p.w_r), p.b_r));
  const Tensor cand = tanh(add(matmul(concat({x, mul(r, h)}, 1), p.w_h), p.b_h));
  return add(h, mul(z, sub(cand, h)));
}

}  // namespace raliflow::ad
