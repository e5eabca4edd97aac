#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace restv2 {

/// Writes to a sibling temporary file, then renames it over `path`, so readers
/// never observe a partial file. Throws Error on I/O failure.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

/// Shortest round-trip decimal form.
std::string format_number(double value);

/// Minimal CSV table: header row plus data rows, RFC 4180 quoting.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_row(std::vector<std::string> row);
  std::string str() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace restv2
