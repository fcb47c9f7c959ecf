#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "spred/lasso_tasks.hpp"
#include "spred/random.hpp"
#include "spred/report.hpp"

using namespace spred;
namespace fs = std::filesystem;

namespace {

SolveReport solved_report() {
  auto inst = gen_orthonormal_lasso(40, 0.5, 0.1, 11, 0.5);
  TrainConfig cfg;
  cfg.optimizer.kind = OptimizerKind::lbfgs;
  cfg.optimizer.lr = 1.0;
  cfg.max_steps = 5000;
  cfg.seed = 1;
  return run_spred_lasso(inst.problem, cfg);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("spred_test_report_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("report json round-trips exactly") {
  auto r = solved_report();
  REQUIRE(!r.trace.empty());
  REQUIRE(r.merge_step.has_value());
  auto back = report_from_json(report_to_json(r));
  CHECK(back == r);
}

TEST_CASE("report json keeps unset merge step and non-finite values") {
  SolveReport r;
  r.task = "synthetic";
  r.seed = 42;
  r.metrics["nan_metric"] = std::numeric_limits<double>::quiet_NaN();
  r.metrics["pos"] = std::numeric_limits<double>::infinity();
  r.metrics["neg"] = -std::numeric_limits<double>::infinity();
  r.metrics["tiny"] = 5e-324;
  r.aborted = true;
  r.diagnosis = "objective became non-finite at step 3";
  auto text = report_to_json(r);
  CHECK(text.find("\"merge_step\": null") != std::string::npos);
  auto back = report_from_json(text);
  CHECK(!back.merge_step.has_value());
  CHECK(std::isnan(back.metrics.at("nan_metric")));
  CHECK(back.metrics.at("pos") == std::numeric_limits<double>::infinity());
  CHECK(back.metrics.at("neg") == -std::numeric_limits<double>::infinity());
  CHECK(back.metrics.at("tiny") == 5e-324);
  CHECK(back.aborted);
  CHECK(back.diagnosis == r.diagnosis);
  CHECK(report_to_json(back) == text);
}

TEST_CASE("malformed json is rejected") {
  CHECK_THROWS(report_from_json("{"));
  CHECK_THROWS(report_from_json("[1, 2]"));
}

TEST_CASE("trace csv parses back bit for bit") {
  auto r = solved_report();
  auto csv = trace_csv(r.trace);
  CHECK(csv.rfind("step,objective,sparsity_loose,sparsity_tight,balance_gap\n", 0) == 0);
  auto rows = parse_trace_csv(csv);
  CHECK(rows == r.trace);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.trace.size() + 1);
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  Rng rng(5);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> exponent(-30, 30);
  for (int i = 0; i < 1000; ++i) {
    double v = normal(rng) * std::pow(10.0, exponent(rng));
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("summary names sparsity at both thresholds and the balance gap") {
  auto r = solved_report();
  auto s = summary_text(r);
  CHECK(s.find("loose threshold") != std::string::npos);
  CHECK(s.find("tight threshold") != std::string::npos);
  CHECK(s.find("balance gap") != std::string::npos);
  CHECK(s.find("merged at step") != std::string::npos);
}

TEST_CASE("emit_report writes the three artifacts") {
  auto r = solved_report();
  auto dir = scratch("emit") / "nested";
  emit_report(r, dir);
  REQUIRE(fs::exists(dir / "report.json"));
  REQUIRE(fs::exists(dir / "trace.csv"));
  REQUIRE(fs::exists(dir / "summary.txt"));
  CHECK(report_from_json(slurp(dir / "report.json")) == r);
  CHECK(parse_trace_csv(slurp(dir / "trace.csv")) == r.trace);
  CHECK(slurp(dir / "summary.txt") == summary_text(r));
  fs::remove_all(dir.parent_path());
}

TEST_CASE("unwritable destination raises ReportIoError") {
  auto base = scratch("blocked");
  fs::create_directories(base);
  std::ofstream(base / "file") << "x";
  SolveReport r;
  CHECK_THROWS_AS(emit_report(r, base / "file" / "sub"), ReportIoError);
  CHECK_THROWS_AS(write_text_file(base / "file", "a.txt", "y"), ReportIoError);
  fs::remove_all(base);
}
