// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace coloc::csv {

/// Reads a whole file; throws Error(Io) when it cannot be opened.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

/// Rows of a headered CSV. `expected_header` is compared after trimming.
/// Blank lines are skipped; `line` is 1-based within the file.
struct Row {
  int line = 0;
  std::vector<std::string_view> fields;
};
std::vector<Row> parse(std::string_view text, std::string_view expected_header,
                       const std::string& source);

double to_double(std::string_view field, const std::string& source, int line);
long long to_int(std::string_view field, const std::string& source, int line);

}  // namespace coloc::csv
