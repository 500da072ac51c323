// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "livmap/error.hpp"

namespace livmap::csv {

/// A parsed CSV table. Row numbers in error messages are 1-based file line
/// numbers, so the header is line 1 and the first data row is line 2.
struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Reads a CSV file. Blank lines are skipped, a trailing CR is tolerated.
/// `expected_prefix` is matched against the leading header columns; pass an
/// empty list to accept any header.
inline Table read(const std::filesystem::path& path,
                  const std::vector<std::string>& expected_prefix) {
  Table t;
  t.path = path.string();
  const std::string text = read_text(path);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!have_header) {
      // UTF-8 byte order mark.
      if (line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      t.header = split_fields(line);
      have_header = true;
      if (t.header.size() < expected_prefix.size()) {
        throw ValidationError(t.path + ": header has too few columns");
      }
      for (std::size_t i = 0; i < expected_prefix.size(); ++i) {
        if (t.header[i] != expected_prefix[i]) {
          throw ValidationError(t.path + ": expected header column '" + expected_prefix[i] +
                                "' at position " + std::to_string(i) + ", got '" + t.header[i] +
                                "'");
        }
      }
      continue;
    }
    auto fields = split_fields(line);
    if (fields.size() != t.header.size()) {
      throw ValidationError(t.path + ": row " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
    if (end == text.size()) break;
  }
  if (!have_header) throw ValidationError(t.path + ": missing header");
  return t;
}

inline std::string where(const Table& t, std::size_t row) {
  return t.path + ": row " + std::to_string(t.line_numbers[row]);
}

inline std::int64_t parse_int(const Table& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError(where(t, row) + ": '" + s + "' is not an integer (column " +
                          t.header[col] + ")");
  }
  return v;
}

/// Parses a finite real; NaN and infinities are rejected.
inline double parse_real(const Table& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError(where(t, row) + ": '" + s + "' is not a number (column " +
                          t.header[col] + ")");
  }
  if (!std::isfinite(v)) {
    throw ValidationError(where(t, row) + ": non-finite value in column " + t.header[col]);
  }
  return v;
}

/// Shortest decimal representation that round-trips.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_real(float v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw RuntimeError("write failed for '" + path.string() + "'");
}

}  // namespace livmap::csv
