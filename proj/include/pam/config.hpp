#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/bench.hpp"

namespace pam {

struct LandscapeConfig {
    GridRange beta;
    GridRange alpha;
    int n = 41;
};

struct ExperimentConfig {
    ExperimentSetup setup;
    std::vector<Method> methods = all_methods();
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string out_dir = "out";
    LandscapeConfig landscape;

    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);

// Overlays `doc` on the defaults. Unknown keys, wrong value types and invalid
// enum names raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);

// Applies one `section.key=value` assignment to a config document. The
// value is read as JSON when it parses, as a bare string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);

// Reads the file, applies overrides in order, then validates.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace pam
