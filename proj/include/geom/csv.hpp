#pragma once

// Plain CSV helpers shared by the graph and condensed-set bundles: no header
// rows, comma separated, LF line endings. Doubles are written in shortest
// round-trip form so save -> load is bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include "geom/sparse.hpp"

namespace geom::csv {

std::string format_double(double v);

// Each line of the file, without the trailing newline. Throws LoadError if
// the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::vector<std::string> split(const std::string& line, char sep = ',');

// Throw LoadError("<file>:<line>: ...") on malformed fields.
double parse_double(const std::string& field, const std::filesystem::path& file, std::size_t line);
long long parse_int(const std::string& field, const std::filesystem::path& file, std::size_t line);

// Rectangular matrix; `expected_cols` of 0 accepts the width of the first row.
Matrix read_matrix(const std::filesystem::path& path, std::size_t expected_cols = 0);
void write_matrix(const std::filesystem::path& path, const Matrix& m);

std::vector<int> read_int_column(const std::filesystem::path& path);
void write_int_column(const std::filesystem::path& path, const std::vector<int>& values);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace geom::csv
