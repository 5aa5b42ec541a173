#pragma once

#include <string>

#include "json.hpp"

#include "icps/data.hpp"
#include "icps/network.hpp"
#include "icps/objective.hpp"

namespace icps {

struct TrainConfig;

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Merge `patch` into `base` recursively (objects merge, everything else replaces).
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

/// Set the leaf at a dotted path ("model.decoder_width") from a string;
/// the value is parsed as JSON when possible, else stored as a string.
void set_dotted(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace icps
