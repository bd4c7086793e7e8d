#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace spamdet {

// Whole-file binary read; LoadError if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a temporary sibling and renames it over `path`, so readers never
// see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Unique sibling name for staging `path`.
std::filesystem::path staging_path(const std::filesystem::path& path);

}  // namespace spamdet
