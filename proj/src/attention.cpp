#include "segattn/attention.hpp"

#include "segattn/error.hpp"

namespace segattn {

namespace {

Var flatten_channels(Var f) {
  const Tensor& t = f.value();
  if (t.rank() != 4) {
    throw ShapeError("channel attention: expected N x C x H x W input, got " + shape_str(t.shape()));
  }
  return reshape(f, {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)});
}

}  // namespace

Var channel_attention_map(Var f) {
  Var flat = flatten_channels(f);
  Var gram = batched_matmul(flat, transpose(flat, {0, 2, 1}));
  return softmax_lastdim(gram);
}

Var channel_attention_forward(const ChannelAttention& m, Var f) {
  const Shape shape = f.shape();
  if (shape.size() != 4 || shape[1] != m.expected_channels) {
    throw ShapeError("channel attention: expected " + std::to_string(m.expected_channels) +
                     " channels, got input " + shape_str(shape));
  }
  if (m.alpha.value().size() != 1) {
    throw ShapeError("channel attention: alpha must hold one element");
  }
  Var flat = flatten_channels(f);
  Var weights = softmax_lastdim(batched_matmul(flat, transpose(flat, {0, 2, 1})));
  Var mixed = batched_matmul(weights, flat);
  Var out = add(mul(mixed, m.alpha), flat);
  return reshape(out, shape);
}

Var concat_fuse(Var a, Var b, const MergeParams& merge) {
  if (a.value().rank() != 4 || b.value().rank() != 4) {
    throw ShapeError("concat_fuse: expected rank-4 inputs, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t h = std::min(a.value().dim(2), b.value().dim(2));
  const std::size_t w = std::min(a.value().dim(3), b.value().dim(3));
  Var joined = concat_channels(center_align(a, h, w), center_align(b, h, w));
  return depthwise_separable_conv(joined, merge.depthwise, merge.pointwise, merge.bias);
}

Var substage_aggregate(const AggregationConfig& cfg, Var x_prev_stage,
                       std::optional<Var> x_prev_backbone, const StageFn& phi) {
  if (cfg.mode == AggregationMode::kResidual) return add(x_prev_stage, phi(x_prev_stage));
  if (!x_prev_backbone) {
    throw ShapeError("substage_aggregate: concat-residual mode needs the previous backbone's stage");
  }
  if (!cfg.projection) {
    throw ShapeError("substage_aggregate: concat-residual mode needs a projection");
  }
  const Tensor& x = x_prev_stage.value();
  Var other = center_align(*x_prev_backbone, x.dim(2), x.dim(3));
  Var u = conv2d(concat_channels(x_prev_stage, other), *cfg.projection);
  return add(u, phi(u));
}

}  // namespace segattn
