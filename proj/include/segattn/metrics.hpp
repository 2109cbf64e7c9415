#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "segattn/tensor.hpp"

namespace segattn {

// counts[g][p] = pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;

  // Pixels whose truth equals ignore are skipped; other out-of-range values
  // throw ShapeError.
  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
           std::optional<std::uint8_t> ignore = 255);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::uint64_t true_positives(std::size_t k) const { return at(k, k); }
  std::uint64_t false_positives(std::size_t k) const;
  std::uint64_t false_negatives(std::size_t k) const;

  // TP / (TP + FP + FN); nullopt when the class is absent from both truth
  // and prediction.
  std::optional<double> iou(std::size_t k) const;
  // TP / (pixels of class k); nullopt when the class has no truth pixels.
  std::optional<double> class_accuracy(std::size_t k) const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct SegMetrics {
  std::vector<std::optional<double>> per_class_iou;
  std::vector<std::optional<double>> per_class_accuracy;
  double mean_iou = 0.0;             // over classes with defined IoU
  double mean_class_accuracy = 0.0;  // over classes with truth pixels
  double pixel_accuracy = 0.0;
};

SegMetrics summarize(const ConfusionMatrix& cm);

// N x K x H x W logits -> N*H*W labels; ties go to the lowest class index.
std::vector<std::uint8_t> argmax_classes(const Tensor& logits);

}  // namespace segattn
