#include "segattn/metrics.hpp"

#include "segattn/error.hpp"

namespace segattn {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred,
                          std::optional<std::uint8_t> ignore) {
  if (truth.size() != pred.size()) {
    throw ShapeError("confusion matrix: " + std::to_string(truth.size()) + " truth labels vs " +
                     std::to_string(pred.size()) + " predictions");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (ignore && truth[i] == *ignore) continue;
    if (truth[i] >= k_ || pred[i] >= k_) {
      throw ShapeError("confusion matrix: label out of range at pixel " + std::to_string(i));
    }
    ++counts_[truth[i] * k_ + pred[i]];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::false_positives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < k_; ++g) {
    if (g != k) s += at(g, k);
  }
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) {
    if (p != k) s += at(k, p);
  }
  return s;
}

std::optional<double> ConfusionMatrix::iou(std::size_t k) const {
  const std::uint64_t denom = true_positives(k) + false_positives(k) + false_negatives(k);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(true_positives(k)) / static_cast<double>(denom);
}

std::optional<double> ConfusionMatrix::class_accuracy(std::size_t k) const {
  const std::uint64_t row = true_positives(k) + false_negatives(k);
  if (row == 0) return std::nullopt;
  return static_cast<double>(true_positives(k)) / static_cast<double>(row);
}

SegMetrics summarize(const ConfusionMatrix& cm) {
  SegMetrics m;
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  std::uint64_t correct = 0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    m.per_class_iou.push_back(cm.iou(k));
    m.per_class_accuracy.push_back(cm.class_accuracy(k));
    if (m.per_class_iou.back()) {
      iou_sum += *m.per_class_iou.back();
      ++iou_n;
    }
    if (m.per_class_accuracy.back()) {
      acc_sum += *m.per_class_accuracy.back();
      ++acc_n;
    }
    correct += cm.true_positives(k);
  }
  m.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  m.mean_class_accuracy = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  const std::uint64_t total = cm.total();
  m.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

std::vector<std::uint8_t> argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_classes: expected N x K x H x W logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  std::vector<std::uint8_t> out(n * plane);
  for (std::size_t item = 0; item < n; ++item) {
    const double* base = logits.data().data() + item * k * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (base[c * plane + p] > base[best * plane + p]) best = c;
      }
      out[item * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace segattn
