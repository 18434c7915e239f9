#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lagamc {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents. Throws ValidationError if unreadable.
std::string file_fingerprint(const std::filesystem::path& path);

/// Reads a whole file. Throws ValidationError if unreadable.
std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lagamc
