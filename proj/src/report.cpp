#include "spred/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace spred {

using nlohmann::json;

ReportIoError::ReportIoError(const std::filesystem::path& path, const std::string& what)
    : std::runtime_error(what + ": " + path.string()), path_(path) {}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

json num(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double read_num(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw std::invalid_argument("not a number: " + s);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("bad number in CSV: " + s);
  return v;
}

json num_map(const std::map<std::string, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = num(v);
  return j;
}

json num_array(const std::vector<double>& v) {
  json j = json::array();
  for (double x : v) j.push_back(num(x));
  return j;
}

std::vector<double> read_array(const json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(read_num(x));
  return out;
}

}  // namespace

std::string report_to_json(const SolveReport& r, int indent) {
  json j;
  j["task"] = r.task;
  j["seed"] = r.seed;
  j["config"] = r.config;
  j["steps"] = r.steps;
  j["converged"] = r.converged;
  j["merge_step"] = r.merge_step ? json(*r.merge_step) : json(nullptr);
  j["balance_gap"] = num(r.balance_gap);
  j["aborted"] = r.aborted;
  j["diagnosis"] = r.diagnosis;
  j["metrics"] = num_map(r.metrics);
  j["timings"] = num_map(r.timings);
  json series = json::object();
  for (const auto& [k, v] : r.series) series[k] = num_array(v);
  j["series"] = series;
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back(json::array({t.step, num(t.objective), num(t.sparsity_loose), num(t.sparsity_tight), num(t.balance_gap)}));
  }
  j["trace"] = trace;
  json params = json::object();
  for (const auto& [k, t] : r.params) params[k] = {{"shape", t.shape()}, {"values", num_array(t.values())}};
  j["params"] = params;
  return j.dump(indent);
}

SolveReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("report.json: ") + e.what());
  }
  SolveReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    r.steps = j.at("steps").get<std::size_t>();
    r.converged = j.at("converged").get<bool>();
    if (!j.at("merge_step").is_null()) r.merge_step = j.at("merge_step").get<std::size_t>();
    r.balance_gap = read_num(j.at("balance_gap"));
    r.aborted = j.at("aborted").get<bool>();
    r.diagnosis = j.at("diagnosis").get<std::string>();
    for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = read_num(v);
    for (const auto& [k, v] : j.at("timings").items()) r.timings[k] = read_num(v);
    for (const auto& [k, v] : j.at("series").items()) r.series[k] = read_array(v);
    for (const auto& row : j.at("trace")) {
      if (row.size() != 5) throw std::invalid_argument("trace rows need 5 columns");
      r.trace.push_back({row[0].get<std::size_t>(), read_num(row[1]), read_num(row[2]), read_num(row[3]),
                         read_num(row[4])});
    }
    for (const auto& [k, v] : j.at("params").items()) {
      r.params.emplace(k, Tensor(v.at("shape").get<Shape>(), read_array(v.at("values"))));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("report.json: ") + e.what());
  }
  return r;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream ss;
  ss << "step,objective,sparsity_loose,sparsity_tight,balance_gap\n";
  for (const auto& t : trace) {
    ss << t.step << ',' << format_double(t.objective) << ',' << format_double(t.sparsity_loose) << ','
       << format_double(t.sparsity_tight) << ',' << format_double(t.balance_gap) << '\n';
  }
  return ss.str();
}

std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,objective,sparsity_loose,sparsity_tight,balance_gap") {
    throw std::invalid_argument("trace.csv: missing header");
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells.size() != 5) throw std::invalid_argument("trace.csv: expected 5 columns: " + line);
    TraceRow t;
    t.step = static_cast<std::size_t>(parse_double(cells[0]));
    t.objective = parse_double(cells[1]);
    t.sparsity_loose = parse_double(cells[2]);
    t.sparsity_tight = parse_double(cells[3]);
    t.balance_gap = parse_double(cells[4]);
    rows.push_back(t);
  }
  return rows;
}

std::string summary_text(const SolveReport& r) {
  std::ostringstream ss;
  ss << "task: " << r.task << "\nseed: " << r.seed << "\n";
  if (r.aborted) ss << "status: aborted\n";
  else ss << "status: " << (r.converged ? "converged" : "not converged") << "\n";
  if (!r.diagnosis.empty()) ss << "diagnosis: " << r.diagnosis << "\n";
  ss << "steps: " << r.steps << "\n";
  if (r.merge_step) ss << "thresholds merged at step: " << *r.merge_step << "\n";
  double loose = std::numeric_limits<double>::quiet_NaN(), tight = loose;
  if (!r.trace.empty()) {
    loose = r.trace.back().sparsity_loose;
    tight = r.trace.back().sparsity_tight;
  }
  if (auto it = r.metrics.find("sparsity_loose"); it != r.metrics.end()) loose = it->second;
  if (auto it = r.metrics.find("sparsity_tight"); it != r.metrics.end()) tight = it->second;
  ss << "final sparsity (loose threshold): " << format_double(loose) << "\n";
  ss << "final sparsity (tight threshold): " << format_double(tight) << "\n";
  ss << "balance gap: " << format_double(r.balance_gap) << "\n";
  if (!r.metrics.empty()) {
    ss << "\nmetrics:\n";
    for (const auto& [k, v] : r.metrics) ss << "  " << k << " = " << format_double(v) << "\n";
  }
  if (!r.timings.empty()) {
    ss << "\nwall clock (s):\n";
    for (const auto& [k, v] : r.timings) ss << "  " << k << " = " << std::setprecision(4) << v << "\n";
  }
  if (!r.config.empty()) {
    ss << "\nconfig:\n";
    for (const auto& [k, v] : r.config) ss << "  " << k << " = " << v << "\n";
  }
  return ss.str();
}

void write_text_file(const std::filesystem::path& dir, const std::string& name, const std::string& text) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ReportIoError(dir, "cannot create directory (" + ec.message() + ")");
  const auto path = dir / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportIoError(path, "cannot open for writing");
  out << text;
  out.close();
  if (!out) throw ReportIoError(path, "write failed");
}

void emit_report(const SolveReport& report, const std::filesystem::path& dir) {
  write_text_file(dir, "report.json", report_to_json(report) + "\n");
  write_text_file(dir, "trace.csv", trace_csv(report.trace));
  write_text_file(dir, "summary.txt", summary_text(report));
}

}  // namespace spred
