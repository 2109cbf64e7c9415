#include "segattn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "kernels.hpp"
#include "segattn/error.hpp"

namespace segattn {

namespace {

std::atomic<bool> g_fault_injection{false};

}  // namespace

void set_backward_fault_injection(bool enabled) { g_fault_injection = enabled; }
bool backward_fault_injection() { return g_fault_injection; }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kBatchedMatmul: return "batched_matmul";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMax: return "max";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kTransposedConv2d: return "transposed_conv2d";
    case OpKind::kMaxPool2d: return "maxpool2d";
    case OpKind::kDepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::kConcat: return "concat";
    case OpKind::kCrop: return "crop";
    case OpKind::kPad: return "pad";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), nullptr, requires_grad});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  bool needs_grad = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ShapeError("graph input handle out of range");
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
  if (!needs_grad) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(backward), needs_grad});
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ShapeError("backward: variable belongs to another graph");
  const Tensor& seed_value = value(loss.id);
  if (!seed_value.is_scalar()) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(seed_value.shape()));
  }
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[loss.id] = Tensor(seed_value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor> in_grads;
  std::vector<char> wanted;
  for (NodeId id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads_[id] || !node.backward) continue;
    const std::size_t k = node.inputs.size();
    in_values.resize(k);
    in_grads.clear();
    wanted.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Node& in = nodes_[node.inputs[i]];
      in_values[i] = &in.value;
      wanted[i] = in.requires_grad ? 1 : 0;
      in_grads.push_back(in.requires_grad ? Tensor(in.value.shape(), 0.0) : Tensor());
    }
    node.backward(BackwardContext{in_values, node.value, *grads_[id], in_grads, wanted});
    for (std::size_t i = 0; i < k; ++i) {
      if (!wanted[i]) continue;
      auto& slot = grads_[node.inputs[i]];
      if (slot) {
        *slot += in_grads[i];
      } else {
        slot = std::move(in_grads[i]);
      }
    }
  }
}

const Tensor* Graph::grad(NodeId id) const {
  if (id >= grads_.size() || !grads_[id]) return nullptr;
  return &*grads_[id];
}

Tensor Graph::grad_or_zeros(Var v) const {
  if (const Tensor* g = grad(v.id)) return *g;
  return Tensor(v.shape(), 0.0);
}

std::vector<std::optional<Tensor>> backward(Graph& graph, Var loss) {
  graph.backward(loss);
  std::vector<std::optional<Tensor>> out(graph.size());
  for (NodeId id = 0; id < graph.size(); ++id) {
    if (const Tensor* g = graph.grad(id)) out[id] = *g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Binary { kAdd, kSub, kMul };

void check_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ShapeError("operands belong to different graphs");
}

Var binary(Binary op, OpKind kind, Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool same = x.shape() == y.shape();
  const bool b_scalar = !same && y.size() == 1;
  const bool a_scalar = !same && !b_scalar && x.size() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(y.shape()));
  }
  const Shape& out_shape = a_scalar ? y.shape() : x.shape();
  Tensor out(out_shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = a_scalar ? x[0] : x[i];
    const double v = b_scalar ? y[0] : y[i];
    switch (op) {
      case Binary::kAdd: out[i] = u + v; break;
      case Binary::kSub: out[i] = u - v; break;
      case Binary::kMul: out[i] = u * v; break;
    }
  }
  auto rule = [op, a_scalar, b_scalar](const BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output;
    const Tensor& u = *ctx.inputs[0];
    const Tensor& v = *ctx.inputs[1];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = a_scalar ? 0 : i;
      const std::size_t ib = b_scalar ? 0 : i;
      double da = 0.0;
      double db = 0.0;
      switch (op) {
        case Binary::kAdd: da = g[i]; db = g[i]; break;
        case Binary::kSub: da = g[i]; db = -g[i]; break;
        case Binary::kMul: da = g[i] * v[ib]; db = g[i] * u[ia]; break;
      }
      if (ctx.wants(0)) ctx.input_grads[0][ia] += da;
      if (ctx.wants(1)) ctx.input_grads[1][ib] += db;
    }
  };
  return a.graph->record(kind, {a.id, b.id}, std::move(out), rule);
}

}  // namespace

Var add(Var a, Var b) { return binary(Binary::kAdd, OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(Binary::kSub, OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(Binary::kMul, OpKind::kMul, a, b); }

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.graph->record(OpKind::kScale, {a.id}, std::move(out),
                         [factor](const BackwardContext& ctx) {
                           const Tensor& g = ctx.grad_output;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ctx.input_grads[0][i] += factor * g[i];
                           }
                         });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.graph->record(OpKind::kRelu, {a.id}, std::move(out), [](const BackwardContext& ctx) {
    const Tensor& x = *ctx.inputs[0];
    const Tensor& g = ctx.grad_output;
    const double gain = backward_fault_injection() ? 0.5 : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ctx.input_grads[0][i] += gain * g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  kernels::gemm_nn(m, n, k, x.data().data(), y.data().data(), out.data().data());
  return a.graph->record(OpKind::kMatmul, {a.id, b.id}, std::move(out),
                         [m, k, n](const BackwardContext& ctx) {
                           const double* g = ctx.grad_output.data().data();
                           if (ctx.wants(0)) {
                             kernels::gemm_nt(m, k, n, g, ctx.inputs[1]->data().data(),
                                              ctx.input_grads[0].data().data());
                           }
                           if (ctx.wants(1)) {
                             kernels::gemm_tn(k, n, m, ctx.inputs[0]->data().data(), g,
                                              ctx.input_grads[1].data().data());
                           }
                         });
}

Var batched_matmul(Var a, Var b) {
  check_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 3 || y.rank() != 3 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1)) {
    throw ShapeError("batched_matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const std::size_t bs = x.dim(0), m = x.dim(1), k = x.dim(2), n = y.dim(2);
  Tensor out(Shape{bs, m, n}, 0.0);
  for (std::size_t i = 0; i < bs; ++i) {
    kernels::gemm_nn(m, n, k, x.data().data() + i * m * k, y.data().data() + i * k * n,
                     out.data().data() + i * m * n);
  }
  return a.graph->record(
      OpKind::kBatchedMatmul, {a.id, b.id}, std::move(out), [bs, m, k, n](const BackwardContext& ctx) {
        for (std::size_t i = 0; i < bs; ++i) {
          const double* g = ctx.grad_output.data().data() + i * m * n;
          if (ctx.wants(0)) {
            kernels::gemm_nt(m, k, n, g, ctx.inputs[1]->data().data() + i * k * n,
                             ctx.input_grads[0].data().data() + i * m * k);
          }
          if (ctx.wants(1)) {
            kernels::gemm_tn(k, n, m, ctx.inputs[0]->data().data() + i * m * k, g,
                             ctx.input_grads[1].data().data() + i * k * n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax

Var softmax_lastdim(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("softmax_lastdim needs rank >= 1");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * len;
    double* o = out.data().data() + r * len;
    const double peak = *std::max_element(in, in + len);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      o[i] = std::exp(in[i] - peak);
      total += o[i];
    }
    for (std::size_t i = 0; i < len; ++i) o[i] /= total;
  }
  return a.graph->record(OpKind::kSoftmax, {a.id}, std::move(out),
                         [rows, len](const BackwardContext& ctx) {
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* y = ctx.output.data().data() + r * len;
                             const double* g = ctx.grad_output.data().data() + r * len;
                             double* d = ctx.input_grads[0].data().data() + r * len;
                             double inner = 0.0;
                             for (std::size_t i = 0; i < len; ++i) inner += g[i] * y[i];
                             for (std::size_t i = 0; i < len; ++i) d[i] += y[i] * (g[i] - inner);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Reductions

Var reduce(ReduceKind kind, Var a, std::optional<std::size_t> axis) {
  const Tensor& x = a.value();
  std::size_t outer = 1, len = x.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= x.rank()) {
      throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for shape " +
                       shape_str(x.shape()));
    }
    for (std::size_t i = 0; i < *axis; ++i) outer *= x.dim(i);
    len = x.dim(*axis);
    for (std::size_t i = *axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    for (std::size_t i = 0; i < x.rank(); ++i) {
      if (i != *axis) out_shape.push_back(x.dim(i));
    }
  }
  Tensor out(out_shape);
  // argmax index along the reduced axis, first occurrence on ties
  std::vector<std::size_t> arg(kind == ReduceKind::kMax ? out.size() : 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t dst = o * inner + in;
      auto src = [&](std::size_t l) { return x[(o * len + l) * inner + in]; };
      if (kind == ReduceKind::kMax) {
        std::size_t best = 0;
        for (std::size_t l = 1; l < len; ++l) {
          if (src(l) > src(best)) best = l;
        }
        arg[dst] = best;
        out[dst] = src(best);
      } else {
        double s = 0.0;
        for (std::size_t l = 0; l < len; ++l) s += src(l);
        out[dst] = kind == ReduceKind::kMean ? s / static_cast<double>(len) : s;
      }
    }
  }
  const OpKind op = kind == ReduceKind::kSum    ? OpKind::kSum
                    : kind == ReduceKind::kMean ? OpKind::kMean
                                                : OpKind::kMax;
  return a.graph->record(
      op, {a.id}, std::move(out),
      [kind, outer, len, inner, arg = std::move(arg)](const BackwardContext& ctx) {
        Tensor& d = ctx.input_grads[0];
        const Tensor& g = ctx.grad_output;
        const double w = kind == ReduceKind::kMean ? 1.0 / static_cast<double>(len) : 1.0;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t dst = o * inner + in;
            if (kind == ReduceKind::kMax) {
              d[(o * len + arg[dst]) * inner + in] += g[dst];
            } else {
              for (std::size_t l = 0; l < len; ++l) d[(o * len + l) * inner + in] += w * g[dst];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->record(OpKind::kReshape, {a.id}, std::move(out), [](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0].data();
    auto g = ctx.grad_output.data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

namespace {

// Maps each output flat index to its source flat index under perm.
std::vector<std::size_t> permutation_sources(const Shape& in_shape,
                                             const std::vector<std::size_t>& perm) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_strides[perm[i]];
    src[flat] = s;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return src;
}

}  // namespace

Var transpose(Var a, std::vector<std::size_t> perm) {
  const Tensor& x = a.value();
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(x.rank());
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  if (sorted != iota) {
    throw ShapeError("transpose: permutation is not a bijection on " + std::to_string(x.rank()) +
                     " axes");
  }
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) out_shape[i] = x.dim(perm[i]);
  auto src = permutation_sources(x.shape(), perm);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  return a.graph->record(OpKind::kTranspose, {a.id}, std::move(out),
                         [src = std::move(src)](const BackwardContext& ctx) {
                           for (std::size_t i = 0; i < src.size(); ++i) {
                             ctx.input_grads[0][src[i]] += ctx.grad_output[i];
                           }
                         });
}

Var transpose(Var a) {
  if (a.value().rank() != 2) {
    throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  }
  return transpose(a, {1, 0});
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
}

GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double step,
                           double tol, double floor) {
  if (!(step > 0.0)) throw ShapeError("grad_check: step must be positive");
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& v : values) vars.push_back(g.leaf(v));
    return fn(g, vars).value().item();
  };

  Graph graph;
  std::vector<Var> vars;
  for (const auto& v : inputs) vars.push_back(graph.leaf(v));
  Var out = fn(graph, vars);
  graph.backward(out);

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = graph.grad_or_zeros(vars[k]);
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + step;
      const double up = evaluate(probe);
      probe[k][i] = saved - step;
      const double down = evaluate(probe);
      probe[k][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[i], numeric, floor);
      worst = std::max(worst, err);
      if (!(err < tol)) report.failures.push_back({k, i, analytic[i], numeric, err});
    }
    report.input_max_rel_err.push_back(worst);
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  report.pass = report.failures.empty();
  return report;
}

}  // namespace segattn
