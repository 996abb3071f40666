#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace prunegcrn {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated file with a header row. Rows whose cell count
/// differs from the header raise ParseError naming the 1-based line.
CsvTable read_csv(const std::filesystem::path& path);

double parse_double(std::string_view cell, const std::filesystem::path& path, std::size_t line);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace prunegcrn
