#include "spectralseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "spectralseg/checkpoint.hpp"
#include "spectralseg/kernels.hpp"
#include "spectralseg/rng.hpp"

namespace fs = std::filesystem;

namespace spectralseg {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be positive");
  if (optimizer != "adam") throw std::invalid_argument("train: unsupported optimizer '" + optimizer + "'");
  loss.validate();
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"batch_size", cfg.batch_size},
                        {"learning_rate", cfg.learning_rate},
                        {"weight_decay", cfg.weight_decay},
                        {"max_epochs", cfg.max_epochs},
                        {"optimizer", cfg.optimizer},
                        {"seed", cfg.seed},
                        {"lambda_dice", cfg.loss.lambda_dice},
                        {"lambda_ce", cfg.loss.lambda_ce},
                        {"dice_epsilon", cfg.loss.epsilon},
                        {"checkpoint_dir", cfg.checkpoint_dir}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
  cfg.optimizer = j.value("optimizer", cfg.optimizer);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.loss.lambda_dice = j.value("lambda_dice", cfg.loss.lambda_dice);
  cfg.loss.lambda_ce = j.value("lambda_ce", cfg.loss.lambda_ce);
  cfg.loss.epsilon = j.value("dice_epsilon", cfg.loss.epsilon);
  cfg.checkpoint_dir = j.value("checkpoint_dir", cfg.checkpoint_dir);
  cfg.validate();
  return cfg;
}

nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json per_dice = nlohmann::json::object();
  nlohmann::json per_iou = nlohmann::json::object();
  nlohmann::json counts = nlohmann::json::object();
  for (int k = 0; k < kNumForeground; ++k) {
    per_dice[kClassNames[static_cast<size_t>(k)]] = rep.per_class_dice[static_cast<size_t>(k)];
    per_iou[kClassNames[static_cast<size_t>(k)]] = rep.per_class_iou[static_cast<size_t>(k)];
    counts[kClassNames[static_cast<size_t>(k)]] = rep.class_scan_counts[static_cast<size_t>(k)];
  }
  return nlohmann::json{{"per_class_dice", per_dice}, {"per_class_iou", per_iou},
                        {"class_scan_counts", counts}, {"mean_dice", rep.mean_dice},
                        {"mean_iou", rep.mean_iou},   {"num_scans", rep.num_scans}};
}

nlohmann::json RunRecord::to_json() const {
  return nlohmann::json{{"model", model_config_to_json(model_cfg)},
                        {"train", train_config_to_json(train_cfg)},
                        {"train_loss", train_loss},
                        {"val_mean_dice", val_mean_dice},
                        {"best_epoch", best_epoch},
                        {"checkpoint", checkpoint_path},
                        {"eval", eval_report_to_json(eval)}};
}

void RunRecord::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write run record: " + path);
  out << to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param> params, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(*p.value));
    v_.push_back(Tensor::zeros_like(*p.value));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = *params_[i].value;
    Tensor& g = *params_[i].grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const std::int64_t n = w.numel();
    double* wd = w.data();
    double* gd = g.data();
    double* md = m.data();
    double* vd = v.data();
    const double wdec = weight_decay;
    const double b1 = beta1, b2 = beta2, lr_t = lr, e = eps;
#pragma omp parallel for simd schedule(static)
    for (std::int64_t k = 0; k < n; ++k) {
      const double grad = gd[k] + wdec * wd[k];
      md[k] = b1 * md[k] + (1.0 - b1) * grad;
      vd[k] = b2 * vd[k] + (1.0 - b2) * grad * grad;
      const double mhat = md[k] / bc1;
      const double vhat = vd[k] / bc2;
      wd[k] -= lr_t * mhat / (std::sqrt(vhat) + e);
    }
  }
}

// ---------------------------------------------------------------------------
// data preparation and batching

PreparedData prepare_dataset(const DatasetManifest& m, int input_h, int input_w) {
  PreparedData d;
  d.h = input_h;
  d.w = input_w;
  d.samples.resize(m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    d.samples[i] = preprocess(load_record(m, static_cast<int>(i)), input_h, input_w);
  }
  d.train_idx = m.indices_for_split("train");
  d.val_idx = m.indices_for_split("val");
  d.test_idx = m.indices_for_split("test");
  return d;
}

std::pair<Tensor, LabelBatch> make_batch(const PreparedData& data, const std::vector<int>& indices, int from,
                                         int count) {
  Tensor x(count, 1, data.h, data.w);
  LabelBatch y(count, data.h, data.w);
  const std::int64_t HW = static_cast<std::int64_t>(data.h) * data.w;
  for (int b = 0; b < count; ++b) {
    const Sample& s = data.samples[static_cast<size_t>(indices[static_cast<size_t>(from + b)])];
    kern::copy(s.image.data(), x.data() + static_cast<std::int64_t>(b) * HW, HW);
    std::copy(s.mask.begin(), s.mask.end(), y.v.begin() + static_cast<std::int64_t>(b) * HW);
  }
  return {std::move(x), std::move(y)};
}

EvalReport evaluate_dataset(SegmentationModel& model, const PreparedData& data, const std::vector<int>& indices,
                            int batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate_dataset: empty scan set");
  EvalAccumulator acc;
  for (int from = 0; from < static_cast<int>(indices.size()); from += batch_size) {
    const int count = std::min(batch_size, static_cast<int>(indices.size()) - from);
    auto [x, y] = make_batch(data, indices, from, count);
    const Tensor logits = model.predict(x);
    const LabelBatch pred = argmax_channels(logits);
    for (int b = 0; b < count; ++b) acc.add_scan(pred, y, b);
  }
  return acc.finalize();
}

EvalReport evaluate_dataset(SegmentationModel& model, const DatasetManifest& m, const std::string& split) {
  PreparedData data = prepare_dataset(m, model.config().input_h, model.config().input_w);
  const std::vector<int> idx = m.indices_for_split(split);
  return evaluate_dataset(model, data, idx);
}

// ---------------------------------------------------------------------------
// training loop

namespace {

std::vector<Tensor> snapshot_weights(SegmentationModel& model) {
  std::vector<Tensor> snap;
  for (const auto& p : model.parameters()) snap.push_back(*p.value);
  for (const auto& b : model.buffers()) snap.push_back(*b.value);
  return snap;
}

void restore_weights(SegmentationModel& model, const std::vector<Tensor>& snap) {
  size_t i = 0;
  for (auto& p : model.parameters()) *p.value = snap[i++];
  for (auto& b : model.buffers()) *b.value = snap[i++];
}

}  // namespace

RunRecord train(const ModelConfig& model_cfg, const DatasetManifest& data, const TrainConfig& cfg) {
  model_cfg.validate();
  cfg.validate();

  PreparedData prepared = prepare_dataset(data, model_cfg.input_h, model_cfg.input_w);
  if (prepared.train_idx.empty() || prepared.val_idx.empty()) {
    throw std::invalid_argument("train: manifest needs non-empty train and val splits");
  }

  SegmentationModel model(model_cfg);
  model.init_weights(cfg.seed);
  Adam opt(model.parameters(), cfg.learning_rate, cfg.weight_decay);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  RunRecord rec;
  rec.model_cfg = model_cfg;
  rec.train_cfg = cfg;

  if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);
  const std::string ckpt_path =
      cfg.checkpoint_dir.empty() ? std::string() : (fs::path(cfg.checkpoint_dir) / "best.ckpt").string();

  std::vector<Tensor> best_snap;
  double best_val = -1.0;
  std::vector<int> order = prepared.train_idx;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (int from = 0; from < static_cast<int>(order.size()); from += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, static_cast<int>(order.size()) - from);
      auto [x, y] = make_batch(prepared, order, from, count);
      Activations acts;
      const Tensor logits = model.forward(x, true, acts);
      const SegLossResult res = seg_loss(logits, y, cfg.loss, true);
      if (!std::isfinite(res.total)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch offset " +
                                 std::to_string(from) + " (dice=" + std::to_string(res.dice) +
                                 ", ce=" + std::to_string(res.ce) + ")");
      }
      model.zero_grad();
      model.backward(acts, res.dlogits);
      opt.step();
      loss_sum += res.total * count;
      seen += count;
    }
    const double epoch_loss = loss_sum / static_cast<double>(seen);
    rec.train_loss.push_back(epoch_loss);

    const EvalReport val = evaluate_dataset(model, prepared, prepared.val_idx, cfg.batch_size);
    rec.val_mean_dice.push_back(val.mean_dice);
    if (val.mean_dice > best_val) {
      best_val = val.mean_dice;
      rec.best_epoch = epoch;
      best_snap = snapshot_weights(model);
      if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model);
    }
    if (cfg.verbose) {
      std::fprintf(stderr, "[train] epoch %3d  loss %.5f  val mean dice %.4f%s\n", epoch, epoch_loss, val.mean_dice,
                   rec.best_epoch == epoch ? "  *" : "");
    }
  }

  restore_weights(model, best_snap);
  rec.checkpoint_path = ckpt_path;
  if (!prepared.test_idx.empty()) {
    rec.eval = evaluate_dataset(model, prepared, prepared.test_idx, cfg.batch_size);
  }
  if (!cfg.checkpoint_dir.empty()) {
    rec.save((fs::path(cfg.checkpoint_dir) / "run.json").string());
  }
  return rec;
}

// ---------------------------------------------------------------------------
// ablations

namespace {

AblationRow run_row(const std::string& label, const ModelConfig& mcfg, const DatasetManifest& data,
                    const TrainConfig& base_train) {
  AblationRow row;
  row.label = label;
  row.model_cfg = mcfg;
  TrainConfig tcfg = base_train;
  if (!tcfg.checkpoint_dir.empty()) {
    tcfg.checkpoint_dir = (fs::path(base_train.checkpoint_dir) / label).string();
  }
  try {
    row.run = train(mcfg, data, tcfg);
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == '(' || c == ')' || c == '.' || c == ',' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace

std::vector<AblationRow> run_alpha_ablation(const std::vector<double>& alphas, const ModelConfig& base_model,
                                            const DatasetManifest& data, const TrainConfig& base_train) {
  std::vector<AblationRow> rows;
  {
    ModelConfig mc = base_model;
    mc.variant = Variant::ynet_conv_branch;
    rows.push_back(run_row("conv_branch", mc, data, base_train));
  }
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("alpha ablation: alpha outside [0, 1]");
    ModelConfig mc = base_model;
    mc.variant = Variant::ynet;
    mc.alpha = a;
    char label[32];
    std::snprintf(label, sizeof(label), "alpha_%g", a);
    rows.push_back(run_row(sanitize(label), mc, data, base_train));
  }
  return rows;
}

std::vector<AblationRow> run_frequency_ablation(const std::vector<FrequencyFilterSpec>& specs,
                                                const ModelConfig& base_model, const DatasetManifest& data,
                                                const TrainConfig& base_train) {
  std::vector<AblationRow> rows;
  for (const auto& spec : specs) {
    spec.validate();
    ModelConfig mc = base_model;
    mc.variant = Variant::ynet;
    mc.filter = spec;
    rows.push_back(run_row(sanitize(spec.str()), mc, data, base_train));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// gradient audit

AuditReport gradient_audit(const ModelConfig& model_cfg, std::uint64_t seed, const std::string& corrupt_param,
                           double tolerance) {
  if (model_cfg.base_width > 8 || model_cfg.input_h > 64 || model_cfg.input_w > 64) {
    throw std::invalid_argument("gradient_audit: use a tiny config (base_width <= 8, input <= 64x64)");
  }
  SegmentationModel model(model_cfg);
  model.init_weights(seed);
  Rng rng(seed * 1315423911ULL + 1);

  // Randomize every parameter (batch-norm shifts included) so no path is
  // accidentally silent at its init value.
  auto params = model.parameters();
  for (auto& p : params) {
    const bool is_gamma = p.name.ends_with(".gamma");
    for (std::int64_t i = 0; i < p.value->numel(); ++i) {
      (*p.value)[i] = is_gamma ? rng.uniform(0.6, 1.4) : (*p.value)[i] + rng.uniform(-0.15, 0.15);
    }
  }

  const int B = 2;
  Tensor x(B, 1, model_cfg.input_h, model_cfg.input_w);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  LabelBatch y(B, model_cfg.input_h, model_cfg.input_w);
  for (auto& v : y.v) v = rng.uniform_int(0, model_cfg.num_classes - 1);

  LossConfig lcfg;
  auto loss_value = [&]() {
    Activations acts;
    const Tensor logits = model.forward(x, true, acts);
    return seg_loss(logits, y, lcfg, false).total;
  };

  // analytic gradients
  {
    Activations acts;
    const Tensor logits = model.forward(x, true, acts);
    const SegLossResult res = seg_loss(logits, y, lcfg, true);
    model.zero_grad();
    model.backward(acts, res.dlogits);
  }
  if (!corrupt_param.empty()) {
    bool found = false;
    for (auto& p : params) {
      if (p.name == corrupt_param) {
        for (std::int64_t i = 0; i < p.grad->numel(); ++i) (*p.grad)[i] = (*p.grad)[i] * 3.0 + 1.0;
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("gradient_audit: unknown parameter '" + corrupt_param + "'");
  }

  AuditReport report;
  auto rel_at = [&](double* slot, double analytic, double h) {
    const double saved = *slot;
    *slot = saved + h;
    const double lp = loss_value();
    *slot = saved - h;
    const double lm = loss_value();
    *slot = saved;
    const double fd = (lp - lm) / (2.0 * h);
    return std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
  };
  for (auto& p : params) {
    LayerAudit la;
    la.param = p.name;
    const std::int64_t n = p.value->numel();
    const int samples = static_cast<int>(std::min<std::int64_t>(3, n));
    for (int s = 0; s < samples; ++s) {
      const std::int64_t idx = n == 1 ? 0 : rng.next_u64() % static_cast<std::uint64_t>(n);
      const double an = (*p.grad)[idx];
      // 1e-3 step first; when it straddles a ReLU or pooling kink, a 1e-5
      // step disambiguates (a wrong backward fails at both steps).
      double rel = rel_at(&(*p.value)[idx], an, 1e-3);
      if (rel > tolerance) rel = std::min(rel, rel_at(&(*p.value)[idx], an, 1e-5));
      la.max_rel_err = std::max(la.max_rel_err, rel);
      ++la.checked;
    }
    if (la.max_rel_err > report.max_rel_err) {
      report.max_rel_err = la.max_rel_err;
      report.worst_param = la.param;
    }
    report.layers.push_back(std::move(la));
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

nlohmann::json AuditReport::to_json() const {
  nlohmann::json layers_j = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"param", l.param}, {"max_rel_err", l.max_rel_err}, {"checked", l.checked}});
  }
  return nlohmann::json{
      {"layers", layers_j}, {"max_rel_err", max_rel_err}, {"worst_param", worst_param}, {"pass", pass}};
}

}  // namespace spectralseg
