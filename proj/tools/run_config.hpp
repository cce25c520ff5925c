#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "exprfuse/data.hpp"
#include "exprfuse/keyvalue.hpp"
#include "exprfuse/model.hpp"
#include "exprfuse/training.hpp"

namespace exprfuse::cli {

// Everything a command needs, with every field present in the key=value form.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string train_manifest;  // data.train_manifest
    std::string val_manifest;    // data.val_manifest; empty means the training manifest
    std::string out_dir = "run";
    FixtureSpec fixture;
    std::size_t fixture_val_videos = 4;
};

KeyValues run_config_keys(const RunConfig& cfg);
// Throws ConfigError naming the key when it is unknown or its value is invalid.
void apply_run_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string serialize_run_config(const RunConfig& cfg);

// Defaults, then the file (if any), then each "key=value" override in order.
// Validates the result.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

void validate(const RunConfig& cfg);

}  // namespace exprfuse::cli
