#pragma once

// Minimal CSV support for the numeric files this project exchanges. No
// quoting: every field is a plain number or a bare token.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "faultid/core.hpp"

namespace faultid::csv {

struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    out.emplace_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Reads a CSV document whose first line must equal `header` exactly
/// (modulo surrounding whitespace). Blank lines are skipped.
inline std::vector<Row> read(std::istream& in, const std::vector<std::string>& header) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split(line);
    if (!have_header) {
      if (fields != header) throw ParseError("unexpected CSV header '" + line + "'", lineno);
      have_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    rows.push_back({lineno, std::move(fields)});
  }
  if (!have_header) throw ParseError("missing CSV header", lineno == 0 ? 1 : lineno);
  return rows;
}

inline std::vector<Row> read_file(const std::filesystem::path& path,
                                  const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return read(in, header);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

inline double to_double(const Row& row, std::size_t col) {
  const auto& s = row.fields.at(col);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("not a number: '" + s + "'", row.line);
  }
  return v;
}

inline long long to_int(const Row& row, std::size_t col) {
  const auto& s = row.fields.at(col);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("not an integer: '" + s + "'", row.line);
  }
  return v;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
  if (!out) throw InputError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace faultid::csv
