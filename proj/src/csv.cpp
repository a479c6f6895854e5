// SPDX-License-Identifier: Apache-2.0
#include "coloc/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "coloc/core.hpp"

namespace coloc::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path));
  out << contents;
  if (!out) throw Error(ErrorKind::Io, fmt::format("short write to {}", path));
}

std::vector<Row> parse(std::string_view text, std::string_view expected_header,
                       const std::string& source) {
  std::vector<Row> rows;
  bool header_seen = false;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty()) {
      if (nl == std::string_view::npos) break;
      continue;
    }
    if (!header_seen) {
      if (line != expected_header) {
        throw Error(ErrorKind::Parse, fmt::format("{}:{}: expected header '{}', got '{}'",
                                                  source, line_no, expected_header, line));
      }
      header_seen = true;
      continue;
    }
    Row r;
    r.line = line_no;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      r.fields.push_back(trim(line.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(r));
    if (nl == std::string_view::npos) break;
  }
  if (!header_seen) {
    throw Error(ErrorKind::Parse, fmt::format("{}: missing header '{}'", source, expected_header));
  }
  return rows;
}

double to_double(std::string_view field, const std::string& source, int line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || p != field.data() + field.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::Parse,
                fmt::format("{}:{}: '{}' is not a finite number", source, line, field));
  }
  return v;
}

long long to_int(std::string_view field, const std::string& source, int line) {
  long long v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || p != field.data() + field.size()) {
    throw Error(ErrorKind::Parse,
                fmt::format("{}:{}: '{}' is not an integer", source, line, field));
  }
  return v;
}

}  // namespace coloc::csv
