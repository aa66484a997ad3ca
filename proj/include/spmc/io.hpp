#pragma once

#include <string>
#include <vector>

namespace spmc {

/// Writes `content` to a temporary file beside `path`, then renames it over
/// `path`. Throws std::runtime_error on failure.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

/// Splits one CSV line on commas (no quoting), trimming a trailing '\r'.
std::vector<std::string> split_csv_line(const std::string& line);

/// Shortest round-trip text for a double ("%.17g").
std::string format_double(double x);

}  // namespace spmc
