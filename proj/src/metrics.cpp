#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsim/harness.hpp"

namespace fedsim {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double_field(const std::string& raw, std::size_t row_no,
                          const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::runtime_error("metrics row " + std::to_string(row_no) + ": bad " + column +
                             " value '" + raw + "'");
  }
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << kMetricsHeader << "\n";
  char wall[32];
  for (const MetricsRow& r : rows) {
    out << r.run_seed << ',' << r.round << ',' << r.strategy << ',' << fmt(r.ce) << ','
        << fmt(r.l_v) << ',' << fmt(r.l_u) << ',' << fmt(r.prox) << ',' << fmt(r.total)
        << ',' << fmt(r.test_accuracy) << ',' << fmt(r.sv_mean) << ',';
    for (std::size_t i = 0; i < r.sv_values.size(); ++i) {
      out << (i ? ";" : "") << fmt(r.sv_values[i]);
    }
    std::snprintf(wall, sizeof(wall), "%.6f", r.wall_seconds);
    out << ',' << wall << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw std::runtime_error("read_metrics_csv: " + path + " is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) {
    throw std::runtime_error("read_metrics_csv: " + path + ": unexpected header");
  }
  std::vector<MetricsRow> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 12) {
      throw std::runtime_error("metrics row " + std::to_string(row_no) + ": expected 12 " +
                               "fields, got " + std::to_string(fields.size()));
    }
    MetricsRow r;
    try {
      r.run_seed = std::stoull(fields[0]);
      r.round = std::stoul(fields[1]);
    } catch (...) {
      throw std::runtime_error("metrics row " + std::to_string(row_no) +
                               ": bad seed or round");
    }
    r.strategy = fields[2];
    r.ce = parse_double_field(fields[3], row_no, "ce");
    r.l_v = parse_double_field(fields[4], row_no, "l_v");
    r.l_u = parse_double_field(fields[5], row_no, "l_u");
    r.prox = parse_double_field(fields[6], row_no, "prox");
    r.total = parse_double_field(fields[7], row_no, "total");
    r.test_accuracy = parse_double_field(fields[8], row_no, "test_accuracy");
    r.sv_mean = parse_double_field(fields[9], row_no, "sv_mean");
    if (!fields[10].empty()) {
      std::stringstream sv(fields[10]);
      std::string item;
      while (std::getline(sv, item, ';')) {
        r.sv_values.push_back(parse_double_field(item, row_no, "sv_values"));
      }
    }
    r.wall_seconds = parse_double_field(fields[11], row_no, "wall_seconds");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fedsim
