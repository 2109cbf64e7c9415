#pragma once

#include <functional>
#include <optional>

#include "segattn/nn_ops.hpp"

namespace segattn {

// Channel self-attention. Each output channel is the input channel plus
// alpha times a softmax-weighted sum of all channels, the weights coming
// from the channel Gram matrix. alpha starts at 0, making the module the
// identity until training moves it.
struct ChannelAttention {
  Var alpha;  // single-element learnable scale
  std::size_t expected_channels = 0;
};

// N x C x C map S with S[n][j][i] = exp(G_ji) / sum_i exp(G_ji), G = F F^T,
// F the N x C x (H*W) flattening of f.
Var channel_attention_map(Var f);

// E_j = alpha * sum_i S_ji F_i + F_j, reshaped back to N x C x H x W.
Var channel_attention_forward(const ChannelAttention& m, Var f);

// Depthwise-separable 3x3 merge applied after concatenation.
struct MergeParams {
  Var depthwise;  // (C_a + C_b) x 1 x 3 x 3
  Var pointwise;  // C_out x (C_a + C_b) x 1 x 1
  Var bias;       // C_out
};

// Center-crops both maps to the common spatial extent, concatenates their
// channels and merges them with the depthwise-separable conv (pad 1).
Var concat_fuse(Var a, Var b, const MergeParams& merge);

enum class AggregationMode { kResidual, kConcatResidual };

struct AggregationConfig {
  AggregationMode mode = AggregationMode::kResidual;
  // 1x1 conv mapping C_n + C_{n-1} channels back to C_n; required in
  // concat-residual mode.
  std::optional<Conv2dParams> projection;
};

using StageFn = std::function<Var(Var)>;

// residual:        x + phi(x)
// concat-residual: u = projection([x, x_prev_backbone]);  u + phi(u)
// x_prev_backbone is center-cropped to x's spatial extent first.
Var substage_aggregate(const AggregationConfig& cfg, Var x_prev_stage,
                       std::optional<Var> x_prev_backbone, const StageFn& phi);

}  // namespace segattn
