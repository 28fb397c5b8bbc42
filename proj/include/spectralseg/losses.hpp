#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spectralseg/tensor.hpp"

namespace spectralseg {

// The eight annotated structures, in reporting column order; mask label k+1
// corresponds to kClassNames[k], label 0 is background.
inline constexpr int kNumForeground = 8;
extern const std::array<std::string, kNumForeground> kClassNames;

// Integer class-index map batch, [B, H, W].
struct LabelBatch {
  int B = 0, H = 0, W = 0;
  std::vector<std::int32_t> v;

  LabelBatch() = default;
  LabelBatch(int b, int h, int w) : B(b), H(h), W(w), v(static_cast<size_t>(b) * h * w, 0) {}
  std::int32_t& at(int b, int h, int w) { return v[(static_cast<size_t>(b) * H + h) * W + w]; }
  std::int32_t at(int b, int h, int w) const { return v[(static_cast<size_t>(b) * H + h) * W + w]; }
};

struct LossConfig {
  double lambda_dice = 1.0;
  double lambda_ce = 1.0;
  double epsilon = 1e-6;

  void validate() const;
};

Tensor softmax_channels(const Tensor& logits);
Tensor one_hot(const LabelBatch& labels, int num_classes);
LabelBatch argmax_channels(const Tensor& probs_or_logits);

// Soft dice loss over probabilities: per class and batch item
// 1 - (2*sum(y*p) + eps) / (sum(y) + sum(p) + eps), then averaged over classes
// (background included) and batch.
double dice_loss(const Tensor& y_onehot, const Tensor& y_hat, double eps);
// Mean negative log-probability of the true class; log clamped at 1e-12.
double ce_loss(const LabelBatch& labels, const Tensor& y_hat);
double total_loss(const LabelBatch& labels, const Tensor& y_hat, const LossConfig& cfg);

struct SegLossResult {
  double total = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  Tensor dlogits;
};

// Combined loss evaluated from logits, with the analytic gradient through the
// softmax when `need_grad` is set.
SegLossResult seg_loss(const Tensor& logits, const LabelBatch& labels, const LossConfig& cfg, bool need_grad);

// Hard-mask overlap scores for one class; `nullopt` when the class appears in
// neither mask (excluded from averages).
std::optional<double> dice_score(const LabelBatch& pred, const LabelBatch& gt, int class_id, int item = 0);
std::optional<double> miou(const LabelBatch& pred, const LabelBatch& gt, int class_id, int item = 0);

struct EvalReport {
  std::array<double, kNumForeground> per_class_dice{};
  std::array<double, kNumForeground> per_class_iou{};
  std::array<int, kNumForeground> class_scan_counts{};  // scans where the class was present
  double mean_dice = 0.0;
  double mean_iou = 0.0;
  int num_scans = 0;
};

// Accumulates per-scan scores; classes absent from both masks in a scan do not
// contribute to that scan's average for the class.
class EvalAccumulator {
 public:
  void add_scan(const LabelBatch& pred, const LabelBatch& gt, int item = 0);
  EvalReport finalize() const;  // throws if no scans were added

 private:
  std::array<double, kNumForeground> dice_sum_{};
  std::array<double, kNumForeground> iou_sum_{};
  std::array<int, kNumForeground> counts_{};
  int scans_ = 0;
};

}  // namespace spectralseg
