#pragma once

#include "funcstart/bytes.hpp"

#include <chrono>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace funcstart::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Sidecar record written next to every artifact as `<artifact>.manifest.json`.
struct RunManifest {
    explicit RunManifest(std::string sub)
        : subcommand(std::move(sub))
    {
    }

    std::string subcommand;
    /// (path, sha256) of every input file.
    std::vector<std::pair<std::string, std::string>> inputs;
    nlohmann::json config = nlohmann::json::object();
    std::optional<std::uint64_t> seed;
    double wall_time = 0.0;

    void add_input(const std::filesystem::path& path, ByteView contents);
    [[nodiscard]] nlohmann::json to_json(const std::filesystem::path& artifact, const std::string& artifact_digest) const;
};

[[nodiscard]] std::filesystem::path manifest_path(const std::filesystem::path& artifact);

/// Writes `data` atomically, then its manifest.
void emit(const std::filesystem::path& path, ByteView data, const RunManifest& manifest);
void emit(const std::filesystem::path& path, const std::string& text, const RunManifest& manifest);

class Stopwatch {
public:
    Stopwatch()
        : start_(std::chrono::steady_clock::now())
    {
    }
    [[nodiscard]] double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace funcstart::cli
