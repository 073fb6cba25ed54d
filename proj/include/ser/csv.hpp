#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ser::csv {

using Row = std::vector<std::string>;

/// Splits one line; supports double-quoted fields with "" escapes.
Row parse_line(std::string_view line);

/// Reads all non-empty lines. The header is returned as row 0.
std::vector<Row> read_file(const std::filesystem::path& path);

std::string format_row(const Row& row);

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double v);

}  // namespace ser::csv
