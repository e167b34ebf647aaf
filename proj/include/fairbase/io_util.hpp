#pragma once

#include <filesystem>
#include <string>

namespace fairbase::io {

// Shortest decimal representation that parses back to the same double
// (integral values gain a ".0" so the type survives a JSON round trip).
std::string double_repr(double value);

// Write-then-rename so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

}  // namespace fairbase::io
