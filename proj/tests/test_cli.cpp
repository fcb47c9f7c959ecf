#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spred/cli.hpp"
#include "spred/report.hpp"

using namespace spred;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("spred_test_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("verify exits 0") {
  auto r = cli({"verify", "--trials", "20"});
  INFO(r.out, r.err);
  CHECK(r.code == kExitOk);
}

TEST_CASE("lasso with the oracle reports the gap to the closed form") {
  auto dir = scratch("lasso");
  auto r = cli({"lasso", "--orthonormal", "--d", "50", "--oracle", "on", "--out", dir.string()});
  REQUIRE(r.code == kExitOk);
  auto rep = report_from_json(slurp(dir / "report.json"));
  CHECK(rep.task == "lasso");
  REQUIRE(rep.metrics.count("oracle_linf") == 1);
  CHECK(rep.metrics.at("oracle_linf") < 1e-6);
  CHECK(parse_trace_csv(slurp(dir / "trace.csv")).size() == rep.trace.size());
  CHECK(r.out.find("balance gap") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("lasso-bench writes milestone rows") {
  auto dir = scratch("bench");
  auto r = cli({"lasso-bench", "--dims", "60", "--solvers", "spred,cd", "--budget", "2", "--out", dir.string()});
  REQUIRE(r.code == kExitOk);
  auto csv = slurp(dir / "bench.csv");
  CHECK(csv.rfind("solver,dimension,milestone,seconds,objective,iterations,censored\n", 0) == 0);
  for (const char* row : {"spred,60,0.75,", "spred,60,0.9,", "spred,60,1,", "cd,60,0.75,", "cd,60,1,"})
    CHECK(csv.find(row) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit 1") {
  CHECK(cli({"lasso", "--no-such-flag"}).code == kExitValidation);
  CHECK(cli({"lasso", "--kappa", "abc"}).code == kExitValidation);
  CHECK(cli({"lasso", "--solver", "newton"}).code == kExitValidation);
  CHECK(cli({"lasso", "--kappa", "-1"}).code == kExitValidation);
  CHECK(cli({"lasso", "--config", "/nonexistent/file.cfg"}).code == kExitValidation);
  CHECK(cli({}).code == kExitValidation);
}

TEST_CASE("config file values apply and command-line flags win") {
  auto dir = scratch("config");
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "# lasso settings\nd = 30\northonormal = true\nkappa=0.25\nmax_steps=777\n";
  auto out = dir / "out";
  auto r = cli({"lasso", "--config", (dir / "run.cfg").string(), "--kappa", "0.75", "--out", out.string()});
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
  auto rep = report_from_json(slurp(out / "report.json"));
  CHECK(rep.config.at("d") == "30");
  CHECK(rep.config.at("design") == "orthonormal");
  CHECK(rep.config.at("kappa") == "0.75");
  CHECK(rep.config.at("max_steps") == "777");

  std::ofstream(dir / "bad.cfg") << "this line has no equals sign\n";
  CHECK(cli({"lasso", "--config", (dir / "bad.cfg").string()}).code == kExitValidation);
  fs::remove_all(dir);
}

TEST_CASE("same seed and flags give the same report apart from timings") {
  auto a = scratch("det_a"), b = scratch("det_b");
  std::vector<std::string> args = {"lasso", "--d", "40", "--seed", "9", "--oracle", "on"};
  auto args_a = args, args_b = args;
  args_a.insert(args_a.end(), {"--out", a.string()});
  args_b.insert(args_b.end(), {"--out", b.string()});
  REQUIRE(cli(args_a).code == kExitOk);
  REQUIRE(cli(args_b).code == kExitOk);
  auto ra = report_from_json(slurp(a / "report.json"));
  auto rb = report_from_json(slurp(b / "report.json"));
  ra.timings.clear();
  rb.timings.clear();
  CHECK(ra == rb);
  CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("SPRED_THREADS must be a positive integer") {
  ::setenv("SPRED_THREADS", "zero", 1);
  CHECK_THROWS_AS(worker_threads(), std::invalid_argument);
  CHECK(cli({"node-sparsity", "--n", "40", "--max-steps", "5"}).code == kExitValidation);
  ::setenv("SPRED_THREADS", "0", 1);
  CHECK_THROWS_AS(worker_threads(), std::invalid_argument);
  ::setenv("SPRED_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  ::unsetenv("SPRED_THREADS");
  CHECK(worker_threads() == 1);
}

TEST_CASE("node-sparsity results do not depend on SPRED_THREADS") {
  auto a = scratch("threads_a"), b = scratch("threads_b");
  std::vector<std::string> args = {"node-sparsity", "--n", "60", "--d", "8", "--classes", "3", "--hidden", "12",
                                   "--kappa-grid", "0,0.01,0.05", "--max-steps", "200"};
  auto args_a = args, args_b = args;
  args_a.insert(args_a.end(), {"--out", a.string()});
  args_b.insert(args_b.end(), {"--out", b.string()});
  ::setenv("SPRED_THREADS", "1", 1);
  REQUIRE(cli(args_a).code == kExitOk);
  ::setenv("SPRED_THREADS", "3", 1);
  REQUIRE(cli(args_b).code == kExitOk);
  ::unsetenv("SPRED_THREADS");
  auto ra = report_from_json(slurp(a / "report.json"));
  auto rb = report_from_json(slurp(b / "report.json"));
  ra.timings.clear();
  rb.timings.clear();
  CHECK(ra == rb);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("unwritable output directory exits 2") {
  auto base = scratch("blocked");
  fs::create_directories(base);
  std::ofstream(base / "file") << "x";
  auto r = cli({"lasso", "--orthonormal", "--d", "10", "--out", (base / "file" / "out").string()});
  CHECK(r.code == kExitNumerical);
  CHECK(!r.err.empty());
  fs::remove_all(base);
}

TEST_CASE("a diverging run exits 2 with a diagnosis") {
  auto r = cli({"lasso", "--d", "30", "--optimizer", "sgd", "--lr", "50", "--max-steps", "500"});
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.find("numerical failure") != std::string::npos);
}
