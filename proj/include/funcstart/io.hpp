#pragma once

#include "funcstart/bytes.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace funcstart {

/// Whole-file read. Throws Io.
[[nodiscard]] Bytes read_file(const std::filesystem::path& path);
[[nodiscard]] std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it over `path`, so readers
/// never observe a partially written file. Throws Io.
void write_file_atomic(const std::filesystem::path& path, ByteView data);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Lower-case hex SHA-256 digest.
[[nodiscard]] std::string sha256_hex(ByteView data);
[[nodiscard]] std::string sha256_hex(std::string_view text);

} // namespace funcstart
