#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spred/train.hpp"

namespace spred {

class ReportIoError : public std::runtime_error {
 public:
  ReportIoError(const std::filesystem::path& path, const std::string& what);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

// report.json keys: task, seed, config, steps, converged, merge_step (null when
// unset), balance_gap, aborted, diagnosis, metrics, timings, series, trace
// (columns: step, objective, sparsity_loose, sparsity_tight, balance_gap) and
// params (name -> {shape, values}). Non-finite numbers are written as the
// strings "nan", "inf" and "-inf".
std::string report_to_json(const SolveReport& report, int indent = 2);
SolveReport report_from_json(const std::string& text);

// Header step,objective,sparsity_loose,sparsity_tight,balance_gap; one row per
// recorded step, numbers in round-trip form.
std::string trace_csv(const std::vector<TraceRow>& trace);
std::vector<TraceRow> parse_trace_csv(const std::string& text);

std::string summary_text(const SolveReport& report);

// Writes report.json, trace.csv and summary.txt, creating `dir` if needed.
void emit_report(const SolveReport& report, const std::filesystem::path& dir);
// Writes `text` to dir/name.
void write_text_file(const std::filesystem::path& dir, const std::string& name, const std::string& text);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace spred
