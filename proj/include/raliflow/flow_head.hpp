#pragma once

// Iterative GRU flow head: per-point context from the embedding and fused
// maps, four gated refinements of the flow estimate.

#include <array>
#include <vector>

#include "raliflow/bevgrid.hpp"
#include "raliflow/conv.hpp"

namespace raliflow {

struct FlowHeadParams {
  ad::Tensor w_init;  // [D0, hidden]
  ad::Tensor b_init;  // [hidden]
  ad::GruParams gru;     // input width D0 + 3 (context, current flow)
  ad::Tensor w_delta;  // [hidden, 3]
  ad::Tensor b_delta;  // [3]
};

/// Context x0 for in-grid points: [embedding, psi_src, psi_tgt, dx, dy, z]
/// gathered at each point's cell. point_inputs are the raw pillar inputs.
inline ad::Tensor head_context(const ad::Tensor& embedding, const ad::Tensor& psi_src, const ad::Tensor& psi_tgt,
                               const ad::Tensor& point_inputs, const PillarAssignment& a) {
  const auto cells = a.in_grid_cells();
  std::vector<double> geo(a.in_grid.size() * 3);
  const auto pv = point_inputs.data();
  const std::size_t pw = point_inputs.dim(1);
  for (std::size_t r = 0; r < a.in_grid.size(); ++r)
    for (std::size_t j = 0; j < 3; ++j) geo[r * 3 + j] = pv[r * pw + j];
  return ad::concat({ad::gather_rows(embedding, cells), ad::gather_rows(psi_src, cells),
                     ad::gather_rows(psi_tgt, cells), ad::Tensor::from({a.in_grid.size(), 3}, std::move(geo))},
                    1);
}

/// Runs the head on context x0 [M, D0] and returns flows [M, 3].
/// Mathematically h <- gru_cell(h, [x0, v]); v <- v + h W_delta + b_delta,
/// with the x0 part of every gate computed once up front.
inline ad::Tensor run_flow_head(const ad::Tensor& x0, const FlowHeadParams& p, std::size_t iterations) {
  using ad::Tensor;
  const std::size_t m = x0.dim(0);
  const std::size_t d0 = x0.dim(1);
  const std::size_t hid = p.gru.hidden();
  if (p.w_init.shape() != ad::Shape{d0, hid} || p.gru.input_width() != d0 + 3 ||
      p.w_delta.shape() != ad::Shape{hid, 3}) {
    throw Error(ErrorCode::ShapeMismatch, "flow head parameters do not match context width " + std::to_string(d0));
  }
  auto split = [&](const Tensor& w) {
    return std::array<Tensor, 3>{ad::slice_rows(w, 0, d0), ad::slice_rows(w, d0, d0 + 3),
                                 ad::slice_rows(w, d0 + 3, d0 + 3 + hid)};
  };
  const auto wz = split(p.gru.w_z);
  const auto wr = split(p.gru.w_r);
  const auto wh = split(p.gru.w_h);
  const Tensor xz = ad::add(ad::matmul(x0, wz[0]), p.gru.b_z);
  const Tensor xr = ad::add(ad::matmul(x0, wr[0]), p.gru.b_r);
  const Tensor xh = ad::add(ad::matmul(x0, wh[0]), p.gru.b_h);

  Tensor h = ad::tanh(ad::add(ad::matmul(x0, p.w_init), p.b_init));
  Tensor v = Tensor::zeros({m, 3});
  for (std::size_t t = 0; t < iterations; ++t) {
    const Tensor z = ad::sigmoid(ad::add(ad::add(xz, ad::matmul(v, wz[1])), ad::matmul(h, wz[2])));
    const Tensor r = ad::sigmoid(ad::add(ad::add(xr, ad::matmul(v, wr[1])), ad::matmul(h, wr[2])));
    const Tensor cand = ad::tanh(ad::add(ad::add(xh, ad::matmul(v, wh[1])), ad::matmul(ad::mul(r, h), wh[2])));
    h = ad::add(h, ad::mul(z, ad::sub(cand, h)));
    v = ad::add(v, ad::add(ad::matmul(h, p.w_delta), p.b_delta));
  }
  return v;
}

/// Per-point flow [N, 3] for a whole cloud; out-of-grid points get zero.
inline ad::Tensor gru_flow_head(const ad::Tensor& embedding, const ad::Tensor& psi_src, const ad::Tensor& psi_tgt,
                                const ad::Tensor& point_inputs, const PillarAssignment& a, const FlowHeadParams& p,
                                std::size_t iterations) {
  const std::size_t n = a.cell.size();
  if (a.in_grid.empty()) return ad::Tensor::zeros({n, 3});
  const ad::Tensor x0 = head_context(embedding, psi_src, psi_tgt, point_inputs, a);
  std::vector<ad::Index> rows(a.in_grid.begin(), a.in_grid.end());
  return ad::scatter_add_rows(run_flow_head(x0, p, iterations), std::move(rows), n);
}

}  // namespace raliflow
