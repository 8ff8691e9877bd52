#include "manifest.hpp"

#include "funcstart/io.hpp"

namespace funcstart::cli {

void RunManifest::add_input(const std::filesystem::path& path, ByteView contents)
{
    inputs.emplace_back(path.string(), sha256_hex(contents));
}

nlohmann::json RunManifest::to_json(const std::filesystem::path& artifact, const std::string& artifact_digest) const
{
    nlohmann::json in = nlohmann::json::array();
    for (const auto& [path, digest] : inputs)
        in.push_back({{"path", path}, {"sha256", digest}});
    nlohmann::json j{{"subcommand", subcommand},
                     {"tool_version", kToolVersion},
                     {"artifact", artifact.filename().string()},
                     {"artifact_sha256", artifact_digest},
                     {"inputs", in},
                     {"config", config},
                     {"wall_time", wall_time}};
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    return j;
}

std::filesystem::path manifest_path(const std::filesystem::path& artifact)
{
    return artifact.string() + ".manifest.json";
}

void emit(const std::filesystem::path& path, ByteView data, const RunManifest& manifest)
{
    write_file_atomic(path, data);
    write_file_atomic(manifest_path(path), manifest.to_json(path, sha256_hex(data)).dump(2) + "\n");
}

void emit(const std::filesystem::path& path, const std::string& text, const RunManifest& manifest)
{
    emit(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), manifest);
}

} // namespace funcstart::cli
