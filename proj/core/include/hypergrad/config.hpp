#pragma once

#include "hypergrad/metaloop.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hypergrad {

inline constexpr int kConfigSchemaVersion = 1;

// Settings only the diagnose/bench commands read.
struct DiagnosticsSettings {
    std::vector<double> gammas{0.0, 0.5, 0.9};
    std::vector<std::uint64_t> bench_seeds{0, 1, 2, 3, 4};
    std::size_t probe_index = 0;
};

struct ExperimentConfig {
    MetaConfig meta;
    DiagnosticsSettings diagnostics;
    std::string origin; // file path or preset name
};

// Parses and validates a JSON config. Errors are ConfigError with a
// "origin:line: message" prefix.
ExperimentConfig parse_config(std::string_view text, std::string_view origin);

// Loads a file path, or a built-in preset when no such file exists.
ExperimentConfig load_config(const std::string& path_or_preset);

std::vector<std::string> preset_names();
// ConfigError for unknown names.
std::string_view preset_text(std::string_view name);

// Canonical JSON rendering of a config (round-trips through parse_config).
std::string to_json(const ExperimentConfig& config);

} // namespace hypergrad
