#pragma once

#include "corefusion/model.hpp"

#include <filesystem>
#include <string>

namespace corefusion {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Single-file archive: magic, schema version, JSON header (config and tensor
/// table), raw little-endian float64 payload, trailing SHA-256 of everything
/// before it. Loading verifies the checksum and rebuilds bit-identical values.
void save_checkpoint(const std::filesystem::path& path, const Parameters& params);
Parameters load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(const std::filesystem::path& path);

// Config serialization shared with the report and CLI writers.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

} // namespace corefusion
