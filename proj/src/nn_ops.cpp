#include "segattn/nn_ops.hpp"

#include <cmath>
#include <random>

#include "kernels.hpp"
#include "segattn/error.hpp"
#include "segattn/parallel.hpp"

namespace segattn {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t dilation, std::size_t padding) {
  if (kernel == 0 || stride == 0 || dilation == 0) {
    throw ShapeError("conv: kernel, stride and dilation must be positive");
  }
  const std::size_t effective = dilation * (kernel - 1) + 1;
  const std::size_t padded = in + 2 * padding;
  if (effective > padded) {
    throw ShapeError("conv: effective kernel extent " + std::to_string(effective) +
                     " exceeds padded input extent " + std::to_string(padded));
  }
  return (padded - effective) / stride + 1;
}

std::size_t transposed_output_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ShapeError("transposed conv: kernel and stride must be positive");
  return (in - 1) * stride + kernel;
}

namespace {

struct Window {
  std::size_t channels, height, width;  // image
  std::size_t kh, kw;
  Pair stride, dilation, padding;
  std::size_t out_h, out_w;  // grid of kernel positions

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

// col[(c,ki,kj)][(oh,ow)] = image[c][oh*s - p + ki*d][ow*s - p + kj*d] (0 outside).
void im2col(const Window& w, const double* image, double* col) {
  for (std::size_t c = 0; c < w.channels; ++c) {
    for (std::size_t ki = 0; ki < w.kh; ++ki) {
      for (std::size_t kj = 0; kj < w.kw; ++kj) {
        double* row = col + ((c * w.kh + ki) * w.kw + kj) * w.cols();
        for (std::size_t oh = 0; oh < w.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * w.stride[0] + ki * w.dilation[0]) -
                          static_cast<std::ptrdiff_t>(w.padding[0]);
          double* dst = row + oh * w.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(w.height)) {
            for (std::size_t ow = 0; ow < w.out_w; ++ow) dst[ow] = 0.0;
            continue;
          }
          const double* src = image + (c * w.height + static_cast<std::size_t>(ih)) * w.width;
          for (std::size_t ow = 0; ow < w.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * w.stride[1] + kj * w.dilation[1]) -
                            static_cast<std::ptrdiff_t>(w.padding[1]);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w.width))
                          ? 0.0
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: image += scatter(col).
void col2im(const Window& w, const double* col, double* image) {
  for (std::size_t c = 0; c < w.channels; ++c) {
    for (std::size_t ki = 0; ki < w.kh; ++ki) {
      for (std::size_t kj = 0; kj < w.kw; ++kj) {
        const double* row = col + ((c * w.kh + ki) * w.kw + kj) * w.cols();
        for (std::size_t oh = 0; oh < w.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * w.stride[0] + ki * w.dilation[0]) -
                          static_cast<std::ptrdiff_t>(w.padding[0]);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(w.height)) continue;
          double* dst = image + (c * w.height + static_cast<std::size_t>(ih)) * w.width;
          const double* src = row + oh * w.out_w;
          for (std::size_t ow = 0; ow < w.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * w.stride[1] + kj * w.dilation[1]) -
                            static_cast<std::ptrdiff_t>(w.padding[1]);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w.width)) continue;
            dst[static_cast<std::size_t>(iw)] += src[ow];
          }
        }
      }
    }
  }
}

void require_rank4(const Tensor& t, std::string_view op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected N x C x H x W input, got " + shape_str(t.shape()));
  }
}

void check_bias(const std::optional<Var>& bias, std::size_t channels, std::string_view op) {
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

std::vector<NodeId> operand_ids(Var x, const Conv2dParams& p) {
  std::vector<NodeId> ids{x.id, p.weight.id};
  if (p.bias) ids.push_back(p.bias->id);
  return ids;
}

// Sums per-item partial gradients in item order so the result does not
// depend on the worker count.
void reduce_partials(const std::vector<std::vector<double>>& partials, Tensor& into) {
  for (const auto& part : partials) {
    for (std::size_t i = 0; i < part.size(); ++i) into[i] += part[i];
  }
}

}  // namespace

Var conv2d(Var x, const Conv2dParams& p) {
  const Tensor& in = x.value();
  const Tensor& weight = p.weight.value();
  require_rank4(in, "conv2d");
  if (weight.rank() != 4 || weight.dim(1) != in.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(in.shape()));
  }
  const std::size_t n = in.dim(0), cout = weight.dim(0);
  check_bias(p.bias, cout, "conv2d");
  Window w{in.dim(1), in.dim(2), in.dim(3), weight.dim(2), weight.dim(3), p.stride, p.dilation,
           p.padding, 0, 0};
  w.out_h = conv_output_extent(w.height, w.kh, p.stride[0], p.dilation[0], p.padding[0]);
  w.out_w = conv_output_extent(w.width, w.kw, p.stride[1], p.dilation[1], p.padding[1]);
  const std::size_t plane = w.cols(), krows = w.rows(), in_item = w.channels * w.height * w.width;

  Tensor out(Shape{n, cout, w.out_h, w.out_w}, 0.0);
  const double* bias = p.bias ? p.bias->value().data().data() : nullptr;
  parallel_for(n, [&](std::size_t item) {
    std::vector<double> col(krows * plane);
    im2col(w, in.data().data() + item * in_item, col.data());
    double* dst = out.data().data() + item * cout * plane;
    kernels::gemm_nn(cout, plane, krows, weight.data().data(), col.data(), dst);
    if (bias) {
      for (std::size_t c = 0; c < cout; ++c) {
        for (std::size_t j = 0; j < plane; ++j) dst[c * plane + j] += bias[c];
      }
    }
  });

  const bool has_bias = p.bias.has_value();
  return x.graph->record(
      OpKind::kConv2d, operand_ids(x, p), std::move(out),
      [w, n, cout, plane, krows, in_item, has_bias](const BackwardContext& ctx) {
        const Tensor& in = *ctx.inputs[0];
        const Tensor& weight = *ctx.inputs[1];
        const Tensor& g = ctx.grad_output;
        const bool want_w = ctx.wants(1);
        std::vector<std::vector<double>> dw(want_w ? n : 0);
        parallel_for(n, [&](std::size_t item) {
          const double* gi = g.data().data() + item * cout * plane;
          if (want_w) {
            std::vector<double> col(krows * plane);
            im2col(w, in.data().data() + item * in_item, col.data());
            dw[item].assign(cout * krows, 0.0);
            kernels::gemm_nt(cout, krows, plane, gi, col.data(), dw[item].data());
          }
          if (ctx.wants(0)) {
            std::vector<double> dcol(krows * plane, 0.0);
            kernels::gemm_tn(krows, plane, cout, weight.data().data(), gi, dcol.data());
            col2im(w, dcol.data(), ctx.input_grads[0].data().data() + item * in_item);
          }
        });
        if (want_w) reduce_partials(dw, ctx.input_grads[1]);
        if (has_bias && ctx.wants(2)) {
          for (std::size_t item = 0; item < n; ++item) {
            for (std::size_t c = 0; c < cout; ++c) {
              const double* gp = g.data().data() + (item * cout + c) * plane;
              double s = 0.0;
              for (std::size_t j = 0; j < plane; ++j) s += gp[j];
              ctx.input_grads[2][c] += s;
            }
          }
        }
      });
}

Var transposed_conv2d(Var x, const Conv2dParams& p) {
  const Tensor& in = x.value();
  const Tensor& weight = p.weight.value();
  require_rank4(in, "transposed_conv2d");
  if (weight.rank() != 4 || weight.dim(0) != in.dim(1)) {
    throw ShapeError("transposed_conv2d: weight " + shape_str(weight.shape()) +
                     " incompatible with input " + shape_str(in.shape()));
  }
  if (p.dilation != Pair{1, 1} || p.padding != Pair{0, 0}) {
    throw ShapeError("transposed_conv2d: dilation and padding are not supported");
  }
  const std::size_t n = in.dim(0), cin = in.dim(1), cout = weight.dim(1);
  check_bias(p.bias, cout, "transposed_conv2d");
  const std::size_t h = in.dim(2), wd = in.dim(3);
  Window w{cout, transposed_output_extent(h, weight.dim(2), p.stride[0]),
           transposed_output_extent(wd, weight.dim(3), p.stride[1]), weight.dim(2), weight.dim(3),
           p.stride, {1, 1}, {0, 0}, h, wd};
  const std::size_t plane = h * wd, krows = w.rows(), out_item = cout * w.height * w.width;

  Tensor out(Shape{n, cout, w.height, w.width}, 0.0);
  const double* bias = p.bias ? p.bias->value().data().data() : nullptr;
  parallel_for(n, [&](std::size_t item) {
    std::vector<double> col(krows * plane, 0.0);
    kernels::gemm_tn(krows, plane, cin, weight.data().data(), in.data().data() + item * cin * plane,
                     col.data());
    double* dst = out.data().data() + item * out_item;
    col2im(w, col.data(), dst);
    if (bias) {
      const std::size_t opl = w.height * w.width;
      for (std::size_t c = 0; c < cout; ++c) {
        for (std::size_t j = 0; j < opl; ++j) dst[c * opl + j] += bias[c];
      }
    }
  });

  const bool has_bias = p.bias.has_value();
  return x.graph->record(
      OpKind::kTransposedConv2d, operand_ids(x, p), std::move(out),
      [w, n, cin, cout, plane, krows, out_item, has_bias](const BackwardContext& ctx) {
        const Tensor& in = *ctx.inputs[0];
        const Tensor& weight = *ctx.inputs[1];
        const Tensor& g = ctx.grad_output;
        const bool want_w = ctx.wants(1);
        std::vector<std::vector<double>> dw(want_w ? n : 0);
        parallel_for(n, [&](std::size_t item) {
          std::vector<double> gcol(krows * plane);
          im2col(w, g.data().data() + item * out_item, gcol.data());
          if (ctx.wants(0)) {
            kernels::gemm_nn(cin, plane, krows, weight.data().data(), gcol.data(),
                             ctx.input_grads[0].data().data() + item * cin * plane);
          }
          if (want_w) {
            dw[item].assign(cin * krows, 0.0);
            kernels::gemm_nt(cin, krows, plane, in.data().data() + item * cin * plane, gcol.data(),
                             dw[item].data());
          }
        });
        if (want_w) reduce_partials(dw, ctx.input_grads[1]);
        if (has_bias && ctx.wants(2)) {
          const std::size_t opl = w.height * w.width;
          for (std::size_t item = 0; item < n; ++item) {
            for (std::size_t c = 0; c < cout; ++c) {
              const double* gp = g.data().data() + item * out_item + c * opl;
              double s = 0.0;
              for (std::size_t j = 0; j < opl; ++j) s += gp[j];
              ctx.input_grads[2][c] += s;
            }
          }
        }
      });
}

Var maxpool2d(Var x) {
  const Tensor& in = x.value();
  require_rank4(in, "maxpool2d");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2d: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the 2x2 window");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{n, c, oh, ow});
  std::vector<std::size_t> arg(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = in.data().data() + plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * w + 2 * j + dj;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t dst = (plane * oh + i) * ow + j;
        arg[dst] = plane * h * w + best;
        out[dst] = src[best];
      }
    }
  }
  return x.graph->record(OpKind::kMaxPool2d, {x.id}, std::move(out),
                         [arg = std::move(arg)](const BackwardContext& ctx) {
                           for (std::size_t i = 0; i < arg.size(); ++i) {
                             ctx.input_grads[0][arg[i]] += ctx.grad_output[i];
                           }
                         });
}

Var depthwise_conv2d(Var x, Var weight, std::size_t padding) {
  const Tensor& in = x.value();
  const Tensor& k = weight.value();
  require_rank4(in, "depthwise_conv2d");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (k.rank() != 4 || k.dim(0) != c || k.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: weight " + shape_str(k.shape()) + " incompatible with input " +
                     shape_str(in.shape()));
  }
  const std::size_t kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = conv_output_extent(h, kh, 1, 1, padding);
  const std::size_t ow = conv_output_extent(w, kw, 1, 1, padding);
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  // Visits every (output, input, tap) triple with the input inside the frame.
  auto sweep = [=](auto&& visit) {
    for (std::size_t item = 0; item < n; ++item) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t src_plane = (item * c + ch) * h * w;
        const std::size_t dst_plane = (item * c + ch) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            for (std::size_t a = 0; a < kh; ++a) {
              const auto ih = static_cast<std::ptrdiff_t>(i + a) - pad;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t b = 0; b < kw; ++b) {
                const auto iw = static_cast<std::ptrdiff_t>(j + b) - pad;
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                visit(dst_plane + i * ow + j,
                      src_plane + static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw),
                      (ch * kh + a) * kw + b);
              }
            }
          }
        }
      }
    }
  };

  Tensor out(Shape{n, c, oh, ow}, 0.0);
  sweep([&](std::size_t o, std::size_t s, std::size_t t) { out[o] += k[t] * in[s]; });
  return x.graph->record(OpKind::kDepthwiseConv2d, {x.id, weight.id}, std::move(out),
                         [sweep](const BackwardContext& ctx) {
                           const Tensor& in = *ctx.inputs[0];
                           const Tensor& k = *ctx.inputs[1];
                           const Tensor& g = ctx.grad_output;
                           const bool dx = ctx.wants(0), dk = ctx.wants(1);
                           sweep([&](std::size_t o, std::size_t s, std::size_t t) {
                             if (dx) ctx.input_grads[0][s] += k[t] * g[o];
                             if (dk) ctx.input_grads[1][t] += in[s] * g[o];
                           });
                         });
}

Var depthwise_separable_conv(Var x, Var depthwise_weight, Var pointwise_weight,
                             Var pointwise_bias) {
  Var spatial = depthwise_conv2d(x, depthwise_weight, 1);
  return conv2d(spatial, Conv2dParams{pointwise_weight, pointwise_bias});
}

Var concat_channels(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank4(x, "concat");
  require_rank4(y, "concat");
  if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
    throw ShapeError("concat: shapes " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                     " differ outside the channel axis");
  }
  const std::size_t n = x.dim(0), ca = x.dim(1), cb = y.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, ca + cb, x.dim(2), x.dim(3)});
  for (std::size_t item = 0; item < n; ++item) {
    std::copy_n(x.data().data() + item * ca * plane, ca * plane,
                out.data().data() + item * (ca + cb) * plane);
    std::copy_n(y.data().data() + item * cb * plane, cb * plane,
                out.data().data() + (item * (ca + cb) + ca) * plane);
  }
  return a.graph->record(OpKind::kConcat, {a.id, b.id}, std::move(out),
                         [n, ca, cb, plane](const BackwardContext& ctx) {
                           const double* g = ctx.grad_output.data().data();
                           for (std::size_t item = 0; item < n; ++item) {
                             const double* ga = g + item * (ca + cb) * plane;
                             const double* gb = ga + ca * plane;
                             if (ctx.wants(0)) {
                               double* d = ctx.input_grads[0].data().data() + item * ca * plane;
                               for (std::size_t i = 0; i < ca * plane; ++i) d[i] += ga[i];
                             }
                             if (ctx.wants(1)) {
                               double* d = ctx.input_grads[1].data().data() + item * cb * plane;
                               for (std::size_t i = 0; i < cb * plane; ++i) d[i] += gb[i];
                             }
                           }
                         });
}

namespace {

// Copies between a small (h x w) window and a large (H x W) canvas at
// (top, left); used by both crop (large -> small) and pad (small -> large).
template <typename Visit>
void window_walk(std::size_t planes, std::size_t big_h, std::size_t big_w, std::size_t top,
                 std::size_t left, std::size_t h, std::size_t w, Visit visit) {
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        visit((p * big_h + top + i) * big_w + left + j, (p * h + i) * w + j);
      }
    }
  }
}

}  // namespace

Var crop2d(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const Tensor& in = x.value();
  require_rank4(in, "crop");
  if (top + h > in.dim(2) || left + w > in.dim(3) || h == 0 || w == 0) {
    throw ShapeError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") outside " +
                     shape_str(in.shape()));
  }
  const std::size_t planes = in.dim(0) * in.dim(1), big_h = in.dim(2), big_w = in.dim(3);
  Tensor out(Shape{in.dim(0), in.dim(1), h, w});
  window_walk(planes, big_h, big_w, top, left, h, w,
              [&](std::size_t big, std::size_t small) { out[small] = in[big]; });
  return x.graph->record(OpKind::kCrop, {x.id}, std::move(out), [=](const BackwardContext& ctx) {
    window_walk(planes, big_h, big_w, top, left, h, w, [&](std::size_t big, std::size_t small) {
      ctx.input_grads[0][big] += ctx.grad_output[small];
    });
  });
}

Var pad2d(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const Tensor& in = x.value();
  require_rank4(in, "pad");
  const std::size_t small_h = in.dim(2), small_w = in.dim(3);
  if (top + small_h > h || left + small_w > w) {
    throw ShapeError("pad: " + shape_str(in.shape()) + " does not fit a " + std::to_string(h) +
                     "x" + std::to_string(w) + " canvas at (" + std::to_string(top) + "," +
                     std::to_string(left) + ")");
  }
  const std::size_t planes = in.dim(0) * in.dim(1);
  Tensor out(Shape{in.dim(0), in.dim(1), h, w}, 0.0);
  window_walk(planes, h, w, top, left, small_h, small_w,
              [&](std::size_t big, std::size_t small) { out[big] = in[small]; });
  return x.graph->record(OpKind::kPad, {x.id}, std::move(out), [=](const BackwardContext& ctx) {
    window_walk(planes, h, w, top, left, small_h, small_w, [&](std::size_t big, std::size_t small) {
      ctx.input_grads[0][small] += ctx.grad_output[big];
    });
  });
}

Var center_align(Var x, std::size_t h, std::size_t w) {
  require_rank4(x.value(), "center_align");
  const std::size_t cur_h = x.value().dim(2), cur_w = x.value().dim(3);
  Var out = x;
  if (cur_h > h || cur_w > w) {
    const std::size_t ch = std::min(cur_h, h), cw = std::min(cur_w, w);
    out = crop2d(out, (cur_h - ch) / 2, (cur_w - cw) / 2, ch, cw);
  }
  const std::size_t now_h = out.value().dim(2), now_w = out.value().dim(3);
  if (now_h < h || now_w < w) out = pad2d(out, (h - now_h) / 2, (w - now_w) / 2, h, w);
  return out;
}

Tensor init_params(const InitSpec& spec, const Shape& shape, std::uint64_t call_index) {
  Tensor out(shape);
  const std::size_t fan_in = shape.size() >= 2 ? out.size() / shape[0] : out.size();
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(call_index),
                    static_cast<std::uint32_t>(call_index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : out.data()) v = dist(rng);
  return out;
}

}  // namespace segattn
