#pragma once

// Small 2D U-Net over H x W x C feature maps.

#include <vector>

#include "raliflow/conv.hpp"

namespace raliflow {

struct ConvLayer {
  ad::Tensor weight;  // [k, k, Cin, Cout]
  ad::Tensor bias;    // [Cout]

  ad::Tensor operator()(const ad::Tensor& x, std::size_t stride = 1) const {
    return ad::add(conv2d(x, weight, stride), bias);
  }
};

/// Per level i: enc[i] (3x3 + ReLU) then down[i] (3x3 stride 2). The
/// bottleneck is 3x3 + ReLU. Decoder level i: upsample, concat the enc[i]
/// skip, dec[i] (3x3 + ReLU). head is the 1x1 projection to the embedding.
struct UNetParams {
  std::vector<ConvLayer> enc;
  std::vector<ConvLayer> down;
  ConvLayer mid;
  std::vector<ConvLayer> dec;
  ConvLayer head;

  std::size_t depth() const { return enc.size(); }
};

/// Channel widths for a U-Net of the given depth: level i uses base * 2^i.
struct UNetShape {
  std::size_t in_channels;
  std::size_t base;
  std::size_t depth;
  std::size_t out_channels;

  std::size_t width(std::size_t level) const { return base << level; }
};

inline ad::Tensor unet_forward(const ad::Tensor& x, const UNetParams& p) {
  if (x.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "unet expects H x W x C");
  const std::size_t f = std::size_t{1} << p.depth();
  if (x.dim(0) % f != 0 || x.dim(1) % f != 0) {
    throw Error(ErrorCode::ShapeMismatch, "unet input " + ad::shape_str(x.shape()) + " not divisible by " +
                                              std::to_string(f));
  }
  std::vector<ad::Tensor> skips;
  ad::Tensor h = x;
  for (std::size_t i = 0; i < p.depth(); ++i) {
    h = ad::relu(p.enc[i](h));
    skips.push_back(h);
    h = p.down[i](h, 2);
  }
  h = ad::relu(p.mid(h));
  for (std::size_t i = p.depth(); i-- > 0;) {
    h = ad::concat({upsample2x_nearest(h), skips[i]}, 2);
    h = ad::relu(p.dec[i](h));
  }
  return p.head(h);
}

}  // namespace raliflow
