#pragma once

#include <filesystem>
#include <string>

namespace hesscope {

/// Writes through a sibling temp file and a rename, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace hesscope
