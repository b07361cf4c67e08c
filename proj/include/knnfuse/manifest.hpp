#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace knnfuse {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Reproducibility record written beside an output as `<output>.manifest.json`:
/// toolkit version, subcommand, resolved config, seeds, and the size and
/// SHA-256 of every input file. Worker count is deliberately absent since it
/// never changes outputs.
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config,
                             const nlohmann::json& seeds, const std::vector<std::filesystem::path>& inputs,
                             const std::vector<std::filesystem::path>& outputs);

std::filesystem::path manifest_path(const std::filesystem::path& output);

void write_manifest(const std::filesystem::path& output, const nlohmann::json& manifest);

}  // namespace knnfuse
