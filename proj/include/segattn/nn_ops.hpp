#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "segattn/autodiff.hpp"

namespace segattn {

using Pair = std::array<std::size_t, 2>;

// Convolution layer operands. weight is C_out x C_in x k_h x k_w for
// conv2d; transposed_conv2d reads it as C_in x C_out x k_h x k_w (the layout
// under which it is the adjoint of conv2d with the same tensor).
struct Conv2dParams {
  Var weight;
  std::optional<Var> bias;
  Pair stride{1, 1};
  Pair dilation{1, 1};
  Pair padding{0, 0};
};

// floor((in + 2 pad - d (k - 1) - 1) / s) + 1; throws ShapeError when the
// dilated kernel does not fit the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding);
// (in - 1) s + k
std::size_t transposed_output_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// Cross-correlation, N x C_in x H x W -> N x C_out x H' x W'.
Var conv2d(Var x, const Conv2dParams& p);

// Scatter-add upsampling, N x C_in x H x W -> N x C_out x ((H-1)s+k) x ((W-1)s+k).
// Dilation and padding of p must be their defaults.
Var transposed_conv2d(Var x, const Conv2dParams& p);

// 2x2 window, stride 2; trailing odd rows/columns are dropped. Gradient
// flows to the first maximum of each window in row-major order.
Var maxpool2d(Var x);

// Per-channel k x k convolution (channel multiplier 1, stride 1, no bias).
// weight is C x 1 x k x k.
Var depthwise_conv2d(Var x, Var weight, std::size_t padding);

// depthwise 3x3 (pad 1) followed by pointwise 1x1 mixing with bias.
Var depthwise_separable_conv(Var x, Var depthwise_weight, Var pointwise_weight,
                             Var pointwise_bias);

// Channel concatenation of N x C_i x H x W maps with equal N, H, W.
Var concat_channels(Var a, Var b);

// Window [top, top+h) x [left, left+w) of every channel.
Var crop2d(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
// Zero-pads into an h x w canvas placing x at (top, left).
Var pad2d(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
// Center-crops or zero-pads each spatial axis to the requested extent with
// offset floor(|delta| / 2).
Var center_align(Var x, std::size_t h, std::size_t w);

enum class InitScheme { kFanInUniform };

struct InitSpec {
  InitScheme scheme = InitScheme::kFanInUniform;
  std::uint64_t seed = 0;
};

// Uniform in [-b, b], b = sqrt(1 / fan_in), fan_in = numel / shape[0]
// (numel for rank <= 1). Bit-reproducible for a given (seed, shape, call_index).
Tensor init_params(const InitSpec& spec, const Shape& shape, std::uint64_t call_index);

}  // namespace segattn
