#pragma once

#include <string>
#include <string_view>

namespace apideob {

// Whole-file read; throws std::runtime_error naming the path on failure.
std::string read_file(const std::string& path);

// Writes to "<path>.tmp.<pid>" and renames over `path`, so readers never see
// a partial file.
void write_file_atomic(const std::string& path, std::string_view content);

}  // namespace apideob
