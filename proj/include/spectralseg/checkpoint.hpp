#pragma once

#include <string>

#include <json.hpp>

#include "spectralseg/model.hpp"

namespace spectralseg {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Single-file archive: magic, little-endian JSON header (embedded ModelConfig
// plus a tensor directory with dotted `branch.stage.layer.param` names), then
// a raw float64 payload. Weights and batch-norm running statistics both ride
// along; only the former count as learnable parameters.
void save_checkpoint(const std::string& path, SegmentationModel& model);
SegmentationModel load_checkpoint(const std::string& path);

}  // namespace spectralseg
