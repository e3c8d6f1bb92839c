#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace ptz {

/// Writes to "<path>.tmp" and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& data);

std::string read_text_file(const std::filesystem::path& path);

/// Parses a JSON config file. Syntax errors become Config errors carrying
/// the file name, line and column.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace ptz
