#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "segattn/data.hpp"
#include "segattn/metrics.hpp"
#include "segattn/network.hpp"

namespace segattn {

// Mean over scored pixels of -log softmax(logits)[target]. targets holds
// N*H*W labels; pixels equal to ignore are skipped. All pixels ignored
// gives 0 with zero gradient.
Var softmax_ce_loss(Var logits, std::span<const std::uint8_t> targets,
                    std::optional<std::uint8_t> ignore = kIgnoreLabel);

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0001;  // decoupled: theta -= lr * wd * theta
};

struct OptimState {
  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

OptimState make_optim_state(const std::vector<NamedParam>& params, const AdamOptions& options);

// Bias-corrected Adam with decoupled weight decay. A non-finite gradient
// throws NumericError naming the parameter and leaves everything untouched.
void adam_step(OptimState& state, std::vector<NamedParam>& params, const std::vector<Tensor>& grads);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_pixel_acc = 0.0;
  double val_pixel_acc = 0.0;
  double val_miou = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t optimizer_steps = 0;
  std::size_t best_epoch = 0;
  double best_val_miou = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  AdamOptions adam;
  bool augment = false;
  AugmentOptions augmentation;
  // Learning rate for a 1-based epoch; constant when unset.
  std::function<double(std::size_t epoch)> lr_schedule;
  // When set, checkpoint.bin (final) and best.bin (best validation mIoU)
  // are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Epoch loop: shuffle(seed, epoch) -> batches -> forward -> loss -> backward
// -> adam_step. Validation metrics use val (train when val is empty).
// Throws NumericError with epoch/batch indices on a non-finite loss.
TrainReport train(SegModel& model, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, const TrainOptions& opts);

struct EvalResult {
  ConfusionMatrix confusion;
  SegMetrics metrics;
};

EvalResult evaluate(const SegModel& model, const std::vector<SegSample>& data,
                    std::size_t batch = 8);

struct FpsReport {
  double ms_per_frame = 0.0;
  double fps = 0.0;
};

// Median forward time over iters runs after warmup, divided by the batch
// extent N.
FpsReport benchmark_fps(const SegModel& model, const Shape& input_shape, std::size_t warmup = 5,
                        std::size_t iters = 50);

// Deterministic shuffle, first floor(ratio * n) samples train, rest test.
std::pair<std::vector<SegSample>, std::vector<SegSample>> split_dataset(
    const std::vector<SegSample>& samples, double ratio = 0.85, std::uint64_t seed = 0);

// epoch,train_loss,train_pixel_acc,val_pixel_acc,val_miou,seconds with six
// decimals.
void write_report_csv(std::ostream& out, const TrainReport& report);
void write_report_csv(const std::filesystem::path& path, const TrainReport& report);

}  // namespace segattn
