#pragma once

// Experiment configuration for the command-line tool: an INI-style file with
// sections [model], [train], [loss], [data] and [sweep]. A TOML file using
// only flat tables, numbers, booleans, quoted strings and flat arrays parses
// the same way.

#include "corefusion/model.hpp"
#include "corefusion/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace corefusion::cli {

struct DataConfig {
    std::filesystem::path root;
    std::uint64_t seed = 7;
    int count = 40;
    int height = 48;
    int width = 48;
    double val_fraction = 0.2;
};

struct CliConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::vector<double> betas = default_betas();

    void validate() const;
};

/// Applies the file's values on top of `cfg`. Unknown sections or keys and
/// unparsable values throw ErrorCode::config.
void load_config_file(const std::filesystem::path& path, CliConfig& cfg);
void write_config_file(std::ostream& out, const CliConfig& cfg);

std::vector<double> parse_real_list(const std::string& text);
std::vector<int> parse_int_list(const std::string& text);

} // namespace corefusion::cli
