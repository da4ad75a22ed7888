#include "uneq/metrics.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

namespace uneq {

namespace {

using nlohmann::json;

// nlohmann serializes non-finite numbers as null; map them back to NaN so an
// EXPLODING record round-trips as non-finite values.
double num_or_nan(const json& j, const char* key, int line_number) {
  if (!j.contains(key))
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": missing field '" + key + "'");
  const auto& v = j.at(key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v.is_number())
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": field '" + key + "' is not a number");
  return v.get<double>();
}

}  // namespace

std::string metrics_line(const DiagnosticsRecord& r) {
  json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["alpha"] = r.alpha;
  j["d_loss"] = r.d_loss;
  j["g1_loss"] = r.g1_loss;
  j["g2_loss"] = r.g2_loss;
  j["d_grad_norm"] = r.d_grad_norm;
  j["g1_grad_norm"] = r.g1_grad_norm;
  j["g2_grad_norm"] = r.g2_grad_norm;
  j["g1_diversity"] = r.g1_diversity;
  j["g2_diversity"] = r.g2_diversity;
  j["status"] = to_string(r.status);
  return j.dump();
}

DiagnosticsRecord parse_metrics_line(const std::string& line,
                                     int line_number) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": not a JSON object");
  DiagnosticsRecord r;
  if (!j.contains("step") || !j.at("step").is_number())
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": missing field 'step'");
  r.step = j.at("step").get<int64_t>();
  if (!j.contains("stage") || !j.at("stage").is_number())
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": missing field 'stage'");
  r.stage = j.at("stage").get<int>();
  r.alpha = num_or_nan(j, "alpha", line_number);
  r.d_loss = num_or_nan(j, "d_loss", line_number);
  r.g1_loss = num_or_nan(j, "g1_loss", line_number);
  r.g2_loss = num_or_nan(j, "g2_loss", line_number);
  r.d_grad_norm = num_or_nan(j, "d_grad_norm", line_number);
  r.g1_grad_norm = num_or_nan(j, "g1_grad_norm", line_number);
  r.g2_grad_norm = num_or_nan(j, "g2_grad_norm", line_number);
  r.g1_diversity = num_or_nan(j, "g1_diversity", line_number);
  r.g2_diversity = num_or_nan(j, "g2_diversity", line_number);
  if (!j.contains("status") || !j.at("status").is_string())
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": missing field 'status'");
  const std::string status = j.at("status").get<std::string>();
  if (status == "ok") {
    r.status = RecordStatus::Ok;
  } else if (status == "exploding") {
    r.status = RecordStatus::Exploding;
  } else {
    throw MetricsError("metrics line " + std::to_string(line_number) +
                       ": unknown status '" + status + "'");
  }
  return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path)
    : out_(path, std::ios::trunc) {
  if (!out_)
    throw MetricsError("cannot open metrics file '" + path.string() + "'");
}

void MetricsWriter::write(const DiagnosticsRecord& record) {
  out_ << metrics_line(record) << '\n';
}

void MetricsWriter::flush() { out_.flush(); }

std::vector<DiagnosticsRecord> read_metrics(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw MetricsError("cannot open metrics file '" + path.string() + "'");
  std::vector<DiagnosticsRecord> records;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    records.push_back(parse_metrics_line(line, line_number));
  }
  return records;
}

}  // namespace uneq
