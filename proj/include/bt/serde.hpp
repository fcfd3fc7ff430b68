#pragma once

#include <json.hpp>

#include "bt/encoder.hpp"
#include "bt/model.hpp"
#include "bt/train.hpp"

// Strict JSON (de)serialization: unknown keys are rejected with the full
// field path so config mistakes surface before any compute starts.
namespace bt::serde {

nlohmann::json to_json(const smr::SmrConfig& cfg);
nlohmann::json to_json(const TextEncoderSpec& spec);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

smr::SmrConfig smr_from_json(const nlohmann::json& j, const std::string& path);
TextEncoderSpec text_encoder_from_json(const nlohmann::json& j,
                                       const std::string& path);
ModelConfig model_from_json(const nlohmann::json& j, const std::string& path);
TrainConfig train_from_json(const nlohmann::json& j, const std::string& path);

}  // namespace bt::serde
