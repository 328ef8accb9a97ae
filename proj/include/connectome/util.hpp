#pragma once

#include <string>

namespace connectome {

// Write via temp file + rename so readers never observe a partial artifact.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace connectome
