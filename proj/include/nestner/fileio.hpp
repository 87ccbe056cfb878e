#pragma once

#include <string>
#include <string_view>

namespace nestner {

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

/// Fixed-point with `digits` decimals, used by report emitters.
std::string format_fixed(double v, int digits);

}  // namespace nestner
