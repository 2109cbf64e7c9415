#include "segattn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "segattn/error.hpp"

namespace segattn {

Var softmax_ce_loss(Var logits, std::span<const std::uint8_t> targets,
                    std::optional<std::uint8_t> ignore) {
  const Tensor& x = logits.value();
  if (x.rank() != 4) {
    throw ShapeError("softmax_ce_loss: expected N x K x H x W logits, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3), plane = h * w;
  if (targets.size() != n * plane) {
    throw ShapeError("softmax_ce_loss: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(x.shape()));
  }
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t item = 0; item < n; ++item) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t t = targets[item * plane + p];
      if (ignore && t == *ignore) continue;
      if (t >= k) {
        throw ShapeError("softmax_ce_loss: target " + std::to_string(t) + " >= " +
                         std::to_string(k) + " classes at (n=" + std::to_string(item) + ", y=" +
                         std::to_string(p / w) + ", x=" + std::to_string(p % w) + ")");
      }
      const double* base = x.data().data() + item * k * plane + p;
      double peak = base[0];
      for (std::size_t c = 1; c < k; ++c) peak = std::max(peak, base[c * plane]);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(base[c * plane] - peak);
      total += peak + std::log(s) - base[t * plane];
      ++valid;
    }
  }
  const double loss = valid ? total / static_cast<double>(valid) : 0.0;
  std::vector<std::uint8_t> saved(targets.begin(), targets.end());
  return logits.graph->record(
      OpKind::kSoftmaxCrossEntropy, {logits.id}, Tensor::scalar(loss),
      [saved = std::move(saved), ignore, n, k, plane, valid](const BackwardContext& ctx) {
        if (valid == 0) return;
        const Tensor& x = *ctx.inputs[0];
        Tensor& d = ctx.input_grads[0];
        const double scale = ctx.grad_output.item() / static_cast<double>(valid);
        for (std::size_t item = 0; item < n; ++item) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t t = saved[item * plane + p];
            if (ignore && t == *ignore) continue;
            const std::size_t off = item * k * plane + p;
            double peak = x[off];
            for (std::size_t c = 1; c < k; ++c) peak = std::max(peak, x[off + c * plane]);
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += std::exp(x[off + c * plane] - peak);
            for (std::size_t c = 0; c < k; ++c) {
              const double prob = std::exp(x[off + c * plane] - peak) / s;
              d[off + c * plane] += scale * (prob - (c == t ? 1.0 : 0.0));
            }
          }
        }
      });
}

OptimState make_optim_state(const std::vector<NamedParam>& params, const AdamOptions& options) {
  OptimState s{options, {}, {}, 0};
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.value.shape(), 0.0);
    s.second_moment.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

void adam_step(OptimState& state, std::vector<NamedParam>& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw ShapeError("adam_step: gradient shape " + shape_str(grads[i].shape()) + " for parameter '" +
                       params[i].name + "' of shape " + shape_str(params[i].value.shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      theta[j] -= o.lr * o.weight_decay * theta[j];
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

namespace {

std::size_t count_correct(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
                          std::size_t& scored) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    ++scored;
    if (truth[i] == pred[i]) ++correct;
  }
  return correct;
}

}  // namespace

TrainReport train(SegModel& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, const TrainOptions& opts) {
  if (train_set.empty()) throw ConfigError("train: training set is empty");
  if (opts.batch == 0 || opts.batch > train_set.size()) {
    throw ConfigError("train: batch " + std::to_string(opts.batch) + " must be in 1.." +
                      std::to_string(train_set.size()));
  }
  const std::vector<SegSample>& val = val_set.empty() ? train_set : val_set;
  if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);

  OptimState state = make_optim_state(model.params(), opts.adam);
  TrainReport report;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (opts.lr_schedule) state.options.lr = opts.lr_schedule(epoch);

    std::vector<SegSample> epoch_samples;
    const std::vector<SegSample>* source = &train_set;
    if (opts.augment) {
      epoch_samples.reserve(train_set.size());
      for (std::size_t i = 0; i < train_set.size(); ++i) {
        auto rng = make_rng(opts.seed, epoch, i);
        epoch_samples.push_back(augment(train_set[i], opts.augmentation, rng));
      }
      source = &epoch_samples;
    }

    double loss_sum = 0.0;
    std::size_t correct = 0, scored = 0;
    const auto batches = batch_indices(source->size(), opts.batch, opts.seed ^ epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Batch batch = make_batch(*source, batches[b]);
      Graph graph;
      Var input = graph.leaf(std::move(batch.images), false);
      ForwardResult fwd = model.forward(graph, input);
      Var loss = softmax_ce_loss(fwd.logits, batch.labels);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      loss_sum += value;
      const auto pred = argmax_classes(fwd.logits.value());
      correct += count_correct(batch.labels, pred, scored);

      graph.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(fwd.params.size());
      for (Var p : fwd.params) grads.push_back(graph.grad_or_zeros(p));
      adam_step(state, model.params(), grads);
      ++report.optimizer_steps;
    }

    const EvalResult eval = evaluate(model, val, opts.batch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.train_pixel_acc = scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0;
    rec.val_pixel_acc = eval.metrics.pixel_accuracy;
    rec.val_miou = eval.metrics.mean_iou;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.epochs.push_back(rec);
    if (!have_best || rec.val_miou > report.best_val_miou) {
      have_best = true;
      report.best_epoch = epoch;
      report.best_val_miou = rec.val_miou;
      if (opts.out_dir) save_checkpoint(model, *opts.out_dir / "best.bin");
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  if (opts.out_dir) save_checkpoint(model, *opts.out_dir / "checkpoint.bin");
  return report;
}

EvalResult evaluate(const SegModel& model, const std::vector<SegSample>& data, std::size_t batch) {
  if (data.empty()) throw ConfigError("evaluate: dataset is empty");
  if (batch == 0) batch = 1;
  EvalResult out{ConfusionMatrix(model.config().num_classes), {}};
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); i += batch) {
    idx.clear();
    for (std::size_t j = i; j < std::min(data.size(), i + batch); ++j) idx.push_back(j);
    Batch b = make_batch(data, idx);
    const auto pred = argmax_classes(model.predict(b.images));
    out.confusion.add(b.labels, pred);
  }
  out.metrics = summarize(out.confusion);
  return out;
}

FpsReport benchmark_fps(const SegModel& model, const Shape& input_shape, std::size_t warmup,
                        std::size_t iters) {
  Shape shape = input_shape;
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  const Tensor input(shape, 0.5);
  for (std::size_t i = 0; i < warmup; ++i) model.predict(input);
  std::vector<double> ms;
  for (std::size_t i = 0; i < std::max<std::size_t>(iters, 1); ++i) {
    const auto start = std::chrono::steady_clock::now();
    model.predict(input);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  FpsReport r;
  r.ms_per_frame = std::max(median / static_cast<double>(shape[0]), 1e-9);
  r.fps = 1000.0 / r.ms_per_frame;
  return r;
}

std::pair<std::vector<SegSample>, std::vector<SegSample>> split_dataset(
    const std::vector<SegSample>& samples, double ratio, std::uint64_t seed) {
  if (samples.size() < 2) throw ConfigError("split_dataset: need at least 2 samples");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split_dataset: ratio must be in (0, 1)");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = make_rng(seed, 0x5b17, 0);
  std::shuffle(order.begin(), order.end(), rng);
  // the epsilon keeps e.g. 0.85 * 20 from flooring to 16
  const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(samples.size()) + 1e-9));
  std::pair<std::vector<SegSample>, std::vector<SegSample>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
  }
  return out;
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,train_loss,train_pixel_acc,val_pixel_acc,val_miou,seconds\n";
  char line[256];
  for (const auto& r : report.epochs) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.train_pixel_acc, r.val_pixel_acc, r.val_miou, r.seconds);
    out << line;
  }
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_report_csv(out, report);
}

}  // namespace segattn
