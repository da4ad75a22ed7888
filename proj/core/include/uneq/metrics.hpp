#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "uneq/training.hpp"

namespace uneq {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON object per line, fields exactly the DiagnosticsRecord fields.
// Non-finite values serialize as null and read back as NaN.
std::string metrics_line(const DiagnosticsRecord& record);
DiagnosticsRecord parse_metrics_line(const std::string& line, int line_number);

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const DiagnosticsRecord& record);
  void flush();

 private:
  std::ofstream out_;
};

// Throws MetricsError naming the line number on malformed input.
std::vector<DiagnosticsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace uneq
