#include "spectralseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spectralseg {

const std::array<std::string, kNumForeground> kClassNames = {"ILM", "NFL-IPL", "INL",    "OPL",
                                                             "ONL-ISM", "ISE",     "OS-RPE", "Fluid"};

void LossConfig::validate() const {
  if (lambda_dice < 0.0 || lambda_ce < 0.0) throw std::invalid_argument("loss weights must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("dice epsilon must be > 0");
}

Tensor softmax_channels(const Tensor& logits) {
  const int B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  Tensor p = Tensor::zeros_like(logits);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const double* z = logits.data() + static_cast<std::int64_t>(b) * K * HW + i;
      double* out = p.data() + static_cast<std::int64_t>(b) * K * HW + i;
      double m = z[0];
      for (int k = 1; k < K; ++k) m = std::max(m, z[static_cast<std::int64_t>(k) * HW]);
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double e = std::exp(z[static_cast<std::int64_t>(k) * HW] - m);
        out[static_cast<std::int64_t>(k) * HW] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (int k = 0; k < K; ++k) out[static_cast<std::int64_t>(k) * HW] *= inv;
    }
  }
  return p;
}

Tensor one_hot(const LabelBatch& labels, int num_classes) {
  Tensor y(labels.B, num_classes, labels.H, labels.W);
  const std::int64_t HW = static_cast<std::int64_t>(labels.H) * labels.W;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < labels.B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int32_t c = labels.v[static_cast<size_t>(b * HW + i)];
      if (c < 0 || c >= num_classes) {
        continue;  // validated upstream; keep the hot path branch-light
      }
      y.data()[(static_cast<std::int64_t>(b) * num_classes + c) * HW + i] = 1.0;
    }
  }
  return y;
}

LabelBatch argmax_channels(const Tensor& t) {
  const int B = t.dim(0), K = t.dim(1), H = t.dim(2), W = t.dim(3);
  LabelBatch out(B, H, W);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const double* z = t.data() + static_cast<std::int64_t>(b) * K * HW + i;
      int best = 0;
      double bv = z[0];
      for (int k = 1; k < K; ++k) {
        const double v = z[static_cast<std::int64_t>(k) * HW];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out.v[static_cast<size_t>(b * HW + i)] = best;
    }
  }
  return out;
}

double dice_loss(const Tensor& y_onehot, const Tensor& y_hat, double eps) {
  if (!y_onehot.same_shape(y_hat)) {
    throw std::invalid_argument("dice_loss: shape mismatch " + y_onehot.shape_str() + " vs " + y_hat.shape_str());
  }
  const int B = y_onehot.dim(0), K = y_onehot.dim(1);
  const std::int64_t HW = static_cast<std::int64_t>(y_onehot.dim(2)) * y_onehot.dim(3);
  double acc = 0.0;
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      const double* y = y_onehot.data() + (static_cast<std::int64_t>(b) * K + k) * HW;
      const double* p = y_hat.data() + (static_cast<std::int64_t>(b) * K + k) * HW;
      double inter = 0.0, denom = 0.0;
      for (std::int64_t i = 0; i < HW; ++i) {
        inter += y[i] * p[i];
        denom += y[i] + p[i];
      }
      acc += 1.0 - (2.0 * inter + eps) / (denom + eps);
    }
  }
  return acc / (static_cast<double>(B) * K);
}

double ce_loss(const LabelBatch& labels, const Tensor& y_hat) {
  const int B = y_hat.dim(0), K = y_hat.dim(1), H = y_hat.dim(2), W = y_hat.dim(3);
  if (labels.B != B || labels.H != H || labels.W != W) throw std::invalid_argument("ce_loss: shape mismatch");
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  double acc = 0.0;
  for (int b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int32_t c = labels.v[static_cast<size_t>(b * HW + i)];
      if (c < 0 || c >= K) throw std::invalid_argument("ce_loss: label out of range");
      const double p = y_hat.data()[(static_cast<std::int64_t>(b) * K + c) * HW + i];
      acc -= std::log(std::max(p, 1e-12));
    }
  }
  return acc / (static_cast<double>(B) * HW);
}

double total_loss(const LabelBatch& labels, const Tensor& y_hat, const LossConfig& cfg) {
  cfg.validate();
  const Tensor y = one_hot(labels, y_hat.dim(1));
  return cfg.lambda_dice * dice_loss(y, y_hat, cfg.epsilon) + cfg.lambda_ce * ce_loss(labels, y_hat);
}

SegLossResult seg_loss(const Tensor& logits, const LabelBatch& labels, const LossConfig& cfg, bool need_grad) {
  cfg.validate();
  const int B = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const std::int64_t HW = static_cast<std::int64_t>(H) * W;
  const Tensor p = softmax_channels(logits);
  const Tensor y = one_hot(labels, K);

  SegLossResult res;
  res.dice = dice_loss(y, p, cfg.epsilon);
  res.ce = ce_loss(labels, p);
  res.total = cfg.lambda_dice * res.dice + cfg.lambda_ce * res.ce;
  if (!need_grad) return res;

  // dice gradient w.r.t. probabilities, per (b, k) plane
  std::vector<double> inter(static_cast<size_t>(B) * K), denom(static_cast<size_t>(B) * K);
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      const double* yy = y.data() + (static_cast<std::int64_t>(b) * K + k) * HW;
      const double* pp = p.data() + (static_cast<std::int64_t>(b) * K + k) * HW;
      double in = 0.0, dn = 0.0;
      for (std::int64_t i = 0; i < HW; ++i) {
        in += yy[i] * pp[i];
        dn += yy[i] + pp[i];
      }
      inter[static_cast<size_t>(b) * K + k] = in;
      denom[static_cast<size_t>(b) * K + k] = dn;
    }
  }

  res.dlogits = Tensor::zeros_like(logits);
  const double dice_scale = cfg.lambda_dice / (static_cast<double>(B) * K);
  const double ce_scale = cfg.lambda_ce / (static_cast<double>(B) * HW);
#pragma omp parallel for schedule(static) collapse(2)
  for (int b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(b) * K * HW + i;
      const double* pp = p.data() + base;
      const double* yy = y.data() + base;
      double* dz = res.dlogits.data() + base;
      // g_k = dL_dice/dp_k at this pixel
      double gdotp = 0.0;
      double g[32];
      for (int k = 0; k < K; ++k) {
        const double U = denom[static_cast<size_t>(b) * K + k] + cfg.epsilon;
        const double I2 = 2.0 * inter[static_cast<size_t>(b) * K + k] + cfg.epsilon;
        const double yk = yy[static_cast<std::int64_t>(k) * HW];
        g[k] = dice_scale * (-(2.0 * yk * U - I2) / (U * U));
        gdotp += g[k] * pp[static_cast<std::int64_t>(k) * HW];
      }
      for (int k = 0; k < K; ++k) {
        const double pk = pp[static_cast<std::int64_t>(k) * HW];
        const double dice_term = pk * (g[k] - gdotp);
        const double ce_term = ce_scale * (pk - yy[static_cast<std::int64_t>(k) * HW]);
        dz[static_cast<std::int64_t>(k) * HW] = dice_term + ce_term;
      }
    }
  }
  return res;
}

namespace {

struct Overlap {
  std::int64_t inter = 0, pred = 0, gt = 0;
};

Overlap count_overlap(const LabelBatch& pred, const LabelBatch& gt, int class_id, int item) {
  if (pred.H != gt.H || pred.W != gt.W) throw std::invalid_argument("mask shape mismatch");
  Overlap o;
  const std::int64_t HW = static_cast<std::int64_t>(pred.H) * pred.W;
  const std::int32_t* pv = pred.v.data() + static_cast<std::int64_t>(item) * HW;
  const std::int32_t* gv = gt.v.data() + static_cast<std::int64_t>(item) * HW;
  for (std::int64_t i = 0; i < HW; ++i) {
    const bool in_p = pv[i] == class_id;
    const bool in_g = gv[i] == class_id;
    o.pred += in_p;
    o.gt += in_g;
    o.inter += in_p && in_g;
  }
  return o;
}

}  // namespace

std::optional<double> dice_score(const LabelBatch& pred, const LabelBatch& gt, int class_id, int item) {
  const Overlap o = count_overlap(pred, gt, class_id, item);
  if (o.pred + o.gt == 0) return std::nullopt;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.pred + o.gt);
}

std::optional<double> miou(const LabelBatch& pred, const LabelBatch& gt, int class_id, int item) {
  const Overlap o = count_overlap(pred, gt, class_id, item);
  const std::int64_t uni = o.pred + o.gt - o.inter;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

void EvalAccumulator::add_scan(const LabelBatch& pred, const LabelBatch& gt, int item) {
  for (int k = 0; k < kNumForeground; ++k) {
    const int cls = k + 1;
    const auto d = dice_score(pred, gt, cls, item);
    if (d.has_value()) {
      dice_sum_[static_cast<size_t>(k)] += *d;
      iou_sum_[static_cast<size_t>(k)] += *miou(pred, gt, cls, item);
      ++counts_[static_cast<size_t>(k)];
    }
  }
  ++scans_;
}

EvalReport EvalAccumulator::finalize() const {
  if (scans_ == 0) throw std::invalid_argument("evaluation over an empty scan set");
  EvalReport rep;
  rep.num_scans = scans_;
  double dsum = 0.0, isum = 0.0;
  for (int k = 0; k < kNumForeground; ++k) {
    const int n = counts_[static_cast<size_t>(k)];
    rep.class_scan_counts[static_cast<size_t>(k)] = n;
    rep.per_class_dice[static_cast<size_t>(k)] = n > 0 ? dice_sum_[static_cast<size_t>(k)] / n : 0.0;
    rep.per_class_iou[static_cast<size_t>(k)] = n > 0 ? iou_sum_[static_cast<size_t>(k)] / n : 0.0;
    dsum += rep.per_class_dice[static_cast<size_t>(k)];
    isum += rep.per_class_iou[static_cast<size_t>(k)];
  }
  rep.mean_dice = dsum / kNumForeground;
  rep.mean_iou = isum / kNumForeground;
  return rep;
}

}  // namespace spectralseg
