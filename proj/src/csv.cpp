#include "geom/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "geom/errors.hpp"

namespace geom::csv {

namespace {

std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing newline does not introduce an empty record.
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& field, const std::filesystem::path& file, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (field.empty() || res.ec != std::errc() || res.ptr != last) {
    throw LoadError(where(file, line) + ": not a number: '" + field + "'");
  }
  if (!std::isfinite(v)) throw LoadError(where(file, line) + ": non-finite value '" + field + "'");
  return v;
}

long long parse_int(const std::string& field, const std::filesystem::path& file, std::size_t line) {
  long long v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw LoadError(where(file, line) + ": not an integer: '" + field + "'");
  }
  return v;
}

Matrix read_matrix(const std::filesystem::path& path, std::size_t expected_cols) {
  const auto lines = read_lines(path);
  std::vector<std::vector<double>> rows;
  rows.reserve(lines.size());
  std::size_t width = expected_cols;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = split(lines[i]);
    if (width == 0) width = fields.size();
    if (fields.size() != width || width == 0) {
      throw LoadError(where(path, i + 1) + ": expected " + std::to_string(width) +
                      " columns, found " + std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(width);
    for (const auto& f : fields) row.push_back(parse_double(f, path, i + 1));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < width; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  write_text(path, out);
}

std::vector<int> read_int_column(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<int> values;
  values.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto fields = split(lines[i]);
    if (fields.size() != 1) {
      throw LoadError(where(path, i + 1) + ": expected one value, found " +
                      std::to_string(fields.size()));
    }
    values.push_back(static_cast<int>(parse_int(fields[0], path, i + 1)));
  }
  return values;
}

void write_int_column(const std::filesystem::path& path, const std::vector<int>& values) {
  std::string out;
  for (int v : values) {
    out += std::to_string(v);
    out += '\n';
  }
  write_text(path, out);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace geom::csv
