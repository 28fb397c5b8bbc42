#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "spectralseg/data.hpp"
#include "spectralseg/losses.hpp"
#include "spectralseg/model.hpp"

namespace spectralseg {

struct TrainConfig {
  int batch_size = 10;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  int max_epochs = 80;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  LossConfig loss;
  std::string checkpoint_dir;
  bool verbose = true;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json eval_report_to_json(const EvalReport& rep);

struct RunRecord {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::vector<double> train_loss;     // per-epoch mean over scans
  std::vector<double> val_mean_dice;  // per-epoch validation score
  int best_epoch = -1;                // index into the curves (first argmax)
  std::string checkpoint_path;
  EvalReport eval;  // test-split report from the best-validation weights

  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

// L2-coupled Adam (weight decay folded into the gradient before the moments).
class Adam {
 public:
  Adam(std::vector<Param> params, double lr, double weight_decay);
  void step();

  double lr;
  double weight_decay;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

 private:
  std::vector<Param> params_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

// In-memory, preprocessed dataset ready for batching.
struct PreparedData {
  int h = 0, w = 0;
  std::vector<Sample> samples;
  std::vector<int> train_idx, val_idx, test_idx;
};

PreparedData prepare_dataset(const DatasetManifest& m, int input_h, int input_w);
std::pair<Tensor, LabelBatch> make_batch(const PreparedData& data, const std::vector<int>& indices, int from, int count);

EvalReport evaluate_dataset(SegmentationModel& model, const PreparedData& data, const std::vector<int>& indices,
                            int batch_size = 8);
EvalReport evaluate_dataset(SegmentationModel& model, const DatasetManifest& m, const std::string& split);

RunRecord train(const ModelConfig& model_cfg, const DatasetManifest& data, const TrainConfig& cfg);

struct AblationRow {
  std::string label;
  ModelConfig model_cfg;
  bool ok = false;
  std::string error;
  RunRecord run;
};

// One full train+eval per alpha plus the conv-branch row; failures are
// recorded per row and do not stop the sweep.
std::vector<AblationRow> run_alpha_ablation(const std::vector<double>& alphas, const ModelConfig& base_model,
                                            const DatasetManifest& data, const TrainConfig& base_train);
std::vector<AblationRow> run_frequency_ablation(const std::vector<FrequencyFilterSpec>& specs,
                                                const ModelConfig& base_model, const DatasetManifest& data,
                                                const TrainConfig& base_train);

struct LayerAudit {
  std::string param;
  double max_rel_err = 0.0;
  int checked = 0;
};

struct AuditReport {
  std::vector<LayerAudit> layers;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;

  nlohmann::json to_json() const;
};

// Central finite-difference check of d(total_loss)/d(theta) for sampled
// entries of every named parameter tensor. `corrupt_param` injects a broken
// analytic gradient for that tensor (negative-control fixture).
AuditReport gradient_audit(const ModelConfig& model_cfg, std::uint64_t seed = 7,
                           const std::string& corrupt_param = "", double tolerance = 1e-2);

}  // namespace spectralseg
