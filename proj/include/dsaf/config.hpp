#pragma once

#include <filesystem>
#include <string>

#include "dsaf/data.hpp"
#include "dsaf/model.hpp"
#include "dsaf/pipeline.hpp"

// JSON layouts for the configuration objects. Every field is optional and
// defaults to the struct default; unknown fields and wrongly typed values
// raise ConfigError naming the field path (for example "train.batch.p").
namespace dsaf {

SynthConfig synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const SynthConfig& cfg);

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

// Reads a whole file; ConfigError if it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

}  // namespace dsaf
