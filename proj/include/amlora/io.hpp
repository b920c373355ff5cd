#pragma once

#include <filesystem>
#include <string_view>

namespace amlora {

/// Writes to `path.tmp` and renames over `path`; throws IoError on failure.
void write_file_atomic(const std::filesystem::path &path, std::string_view contents);

/// Creates `dir` (and parents) or throws IoError.
void ensure_directory(const std::filesystem::path &dir);

} // namespace amlora
