#include "spred/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "spred/data.hpp"
#include "spred/feature_selection.hpp"
#include "spred/lasso_tasks.hpp"
#include "spred/node_sparsity.hpp"
#include "spred/oracles.hpp"
#include "spred/prune.hpp"
#include "spred/report.hpp"
#include "spred/sparse_coding.hpp"
#include "spred/verify.hpp"

namespace spred {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file: " + path);
  std::vector<std::string> args;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(path + ":" + std::to_string(no) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::size_t worker_threads() {
  const char* env = std::getenv("SPRED_THREADS");
  if (!env || !*env) return 1;
  std::size_t n = 0;
  const std::string s(env);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || n == 0) {
    throw std::invalid_argument("SPRED_THREADS must be a positive integer, got '" + s + "'");
  }
  return n;
}

namespace {

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

struct Common {
  double kappa = kUnset;
  double lr = kUnset;
  std::string optimizer;
  double loose = 1e-3;
  double tight = 1e-5;
  std::uint64_t seed = 0;
  std::string out;
  std::string oracle = "on";
  std::size_t max_steps = 0;
  std::string config;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--kappa", c.kappa, "Sparsity strength");
  app->add_option("--lr", c.lr, "Learning rate");
  app->add_option("--optimizer", c.optimizer, "sgd, adam or lbfgs")
      ->check(CLI::IsMember({"sgd", "adam", "lbfgs"}));
  app->add_option("--threshold-loose", c.loose, "Loose sparsity threshold (relative to max)")->capture_default_str();
  app->add_option("--threshold-tight", c.tight, "Tight sparsity threshold (relative to max)")->capture_default_str();
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out", c.out, "Directory for report.json, trace.csv and summary.txt");
  app->add_option("--oracle", c.oracle, "Compare against the reference solver")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  app->add_option("--max-steps", c.max_steps, "Step budget (0 keeps the task default)");
  app->add_option("--config", c.config, "key=value file; flags given on the command line win");
}

double or_default(double v, double fallback) { return std::isnan(v) ? fallback : v; }

TrainConfig train_config(const Common& c, OptimizerKind kind, double lr, std::size_t steps) {
  TrainConfig t;
  t.optimizer.kind = c.optimizer.empty() ? kind : parse_optimizer(c.optimizer);
  t.optimizer.lr = or_default(c.lr, lr);
  t.max_steps = c.max_steps > 0 ? c.max_steps : steps;
  t.thresholds.loose = c.loose;
  t.thresholds.tight = c.tight;
  t.seed = c.seed;
  t.validate();
  return t;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Outcome {
  SolveReport report;
  std::string text;                    // printed to stdout
  std::map<std::string, std::string> extra_files;  // name -> contents
  int code = kExitOk;
};

int finish(Outcome o, const Common& c, std::ostream& out, std::ostream& err) {
  if (o.report.aborted && o.code == kExitOk) o.code = kExitNumerical;
  out << (o.text.empty() ? summary_text(o.report) : o.text);
  if (!c.out.empty()) {
    emit_report(o.report, c.out);
    for (const auto& [name, body] : o.extra_files) write_text_file(c.out, name, body);
    out << "wrote " << c.out << "\n";
  }
  if (o.report.aborted) err << "numerical failure: " << o.report.diagnosis << "\n";
  return o.code;
}

// lasso ---------------------------------------------------------------------

struct LassoArgs {
  std::size_t d = 100;
  std::size_t n = 0;
  bool orthonormal = false;
  double sparsity = 0.5;
  double noise = 0.1;
  std::size_t k_true = 0;
  std::string data;
  std::string solver = "spred";
  std::vector<double> lr_grid;
};

Outcome run_lasso(const Common& c, const LassoArgs& a) {
  const double kappa = or_default(c.kappa, 0.5);
  oracles::LassoProblem p;
  if (!a.data.empty()) {
    const Tensor M = data::load_csv_matrix(a.data);
    if (M.cols() < 2) throw std::invalid_argument("lasso data needs feature columns and a final target column");
    p.X = Tensor(Shape{M.rows(), M.cols() - 1});
    p.y = Tensor(Shape{M.rows()});
    for (std::size_t i = 0; i < M.rows(); ++i) {
      for (std::size_t j = 0; j + 1 < M.cols(); ++j) p.X(i, j) = M(i, j);
      p.y[i] = M(i, M.cols() - 1);
    }
    p.kappa = kappa;
  } else if (a.orthonormal) {
    if (a.n != 0 && a.n != a.d) throw std::invalid_argument("orthonormal designs are square; drop --n or set it to --d");
    p = gen_orthonormal_lasso(a.d, a.sparsity, a.noise, c.seed, kappa).problem;
  } else {
    const std::size_t n = a.n ? a.n : 2 * a.d;
    p = gen_random_lasso(n, a.d, a.k_true ? a.k_true : std::max<std::size_t>(1, a.d / 5), a.noise, c.seed, kappa)
            .problem;
  }
  p.validate();
  const TrainConfig cfg = train_config(c, OptimizerKind::lbfgs, 1.0, 20000);
  auto run = [&](const TrainConfig& t) {
    return a.solver == "l1" ? run_naive_l1_lasso(p, t) : run_spred_lasso(p, t);
  };
  Outcome o;
  o.report = a.lr_grid.empty() ? run(cfg) : best_over_learning_rates(a.lr_grid, cfg, run);
  o.report.config["design"] = !a.data.empty() ? "file" : (a.orthonormal ? "orthonormal" : "gaussian");
  o.report.config["d"] = std::to_string(p.features());
  o.report.config["n"] = std::to_string(p.samples());
  o.report.config["solver"] = a.solver;
  if (!a.data.empty()) o.report.config["data"] = a.data;
  if (c.oracle == "on" && !o.report.aborted) compare_with_oracle(o.report, p);
  return o;
}

// lasso-bench ---------------------------------------------------------------

struct BenchArgs {
  std::vector<std::size_t> dims{1000, 4000};
  std::vector<std::string> solvers{"spred", "cd"};
  BenchOptions options;
};

Outcome run_bench(const Common& c, BenchArgs a) {
  std::vector<BenchSolver> solvers;
  for (const auto& s : a.solvers) solvers.push_back(parse_bench_solver(s));
  a.options.seed = c.seed;
  a.options.spred = train_config(c, OptimizerKind::lbfgs, 1.0, 100000);
  if (!std::isnan(c.kappa)) a.options.kappa_fraction = c.kappa;
  const auto rows = bench_scaling(a.dims, solvers, a.options);
  Outcome o;
  o.report.task = "lasso-bench";
  o.report.seed = c.seed;
  o.report.config = a.options.spred.echo();
  o.report.config["dims"] = join(a.dims);
  o.report.config["samples"] = std::to_string(a.options.samples);
  o.report.config["kappa_fraction"] = format_double(a.options.kappa_fraction);
  o.report.converged = true;
  for (const auto& r : rows) {
    const std::string key = r.solver + "_" + std::to_string(r.dimension) + "_" +
                            std::to_string(static_cast<int>(std::lround(r.milestone * 100)));
    o.report.metrics[key + "_seconds"] = r.seconds;
    o.report.metrics[key + "_objective"] = r.objective;
    if (r.censored) o.report.converged = false;
  }
  o.text = bench_csv(rows);
  o.extra_files["bench.csv"] = o.text;
  return o;
}

// sparse-code ---------------------------------------------------------------

struct SparseCodeArgs {
  std::string image;
  std::size_t image_size = 128;
  std::size_t patch = 8;
  std::size_t patches = 1000;
  SparseCodingConfig cfg;
  std::size_t batch = 0;
};

Outcome run_sparse(const Common& c, SparseCodeArgs a) {
  const Tensor img = a.image.empty() ? data::synthetic_texture(a.image_size, c.seed) : data::read_pgm(a.image);
  const Tensor X = data::extract_patches(img, a.patch, a.patches, c.seed + 1);
  a.cfg.kappa = or_default(c.kappa, a.cfg.kappa);
  a.cfg.train = train_config(c, OptimizerKind::sgd, 0.3, 0);
  a.cfg.train.batch_size = a.batch;
  const Tensor B0 = random_dictionary(X.rows(), a.cfg.k, c.seed + 3);
  a.cfg.initial_dictionary = &B0;
  auto run = run_sparse_coding(X, a.cfg);
  Outcome o;
  o.report = std::move(run.report);
  o.report.config["patch"] = std::to_string(a.patch);
  o.report.config["patches"] = std::to_string(a.patches);
  o.report.config["image"] = a.image.empty() ? "synthetic" : a.image;
  if (c.oracle == "on" && !o.report.aborted) {
    oracles::AlternatingOptions opt;
    opt.seed = c.seed;
    opt.initial_dictionary = &B0;
    const auto ref = oracles::alternating_sparse_coding(X, a.cfg.k, a.cfg.kappa, opt);
    const double f = oracles::sparse_coding_objective(X, ref.B, ref.S, a.cfg.kappa);
    o.report.metrics["oracle_objective"] = f;
    o.report.metrics["objective_ratio"] = o.report.metrics["l1_objective"] / f;
  }
  std::ostringstream dict;
  dict.precision(17);
  for (std::size_t i = 0; i < run.B.rows(); ++i) {
    for (std::size_t j = 0; j < run.B.cols(); ++j) dict << (j ? "," : "") << format_double(run.B(i, j));
    dict << "\n";
  }
  o.extra_files["dictionary.csv"] = dict.str();
  return o;
}

// feature-select ------------------------------------------------------------

struct FeatureArgs {
  std::string data;
  std::size_t n = 200;
  std::size_t d = 1000;
  std::size_t k_true = 10;
  std::string nonlinearity = "mixed";
  double margin = 1.0;
  std::string model = "ensemble";
  std::vector<std::size_t> hidden{32, 32};
  std::string activation = "relu";
  std::vector<double> kappa_grid;
  std::vector<double> lr_grid;
  std::size_t eval_every = 50;
  std::size_t patience = 10;
};

Outcome run_features(const Common& c, const FeatureArgs& a) {
  FeatureSelectionTask task;
  if (!a.data.empty()) {
    task = make_feature_selection_task(data::load_labeled_csv(a.data), c.seed);
  } else {
    FeatureTaskOptions opt;
    opt.margin = a.margin;
    task = gen_feature_selection(a.n, a.d, a.k_true, parse_nonlinearity(a.nonlinearity), c.seed, opt);
  }
  FeatureSelectionConfig cfg;
  cfg.train = train_config(c, OptimizerKind::lbfgs, 1.0, 3000);
  cfg.train.optimizer.max_backtracks = 10;
  cfg.hidden = a.hidden;
  cfg.activation = parse_activation(a.activation);
  if (!std::isnan(c.kappa)) cfg.kappa_grid = {c.kappa};
  else if (!a.kappa_grid.empty()) cfg.kappa_grid = a.kappa_grid;
  cfg.lr_grid = a.lr_grid;
  cfg.eval_every = a.eval_every;
  cfg.patience = a.patience;
  Outcome o;
  o.report = run_feature_selection(task, parse_feature_model(a.model), cfg);
  o.report.config["data"] = a.data.empty() ? "synthetic" : a.data;
  o.report.config["hidden"] = join(a.hidden);
  if (a.data.empty()) {
    o.report.config["nonlinearity"] = a.nonlinearity;
    o.report.config["margin"] = format_double(a.margin);
    o.report.config["true_support"] = join(task.support);
  }
  return o;
}

// node-sparsity -------------------------------------------------------------

struct NodeArgs {
  std::string data;
  std::size_t n = 300;
  std::size_t d = 50;
  std::size_t classes = 10;
  std::size_t hidden = 100;
  std::string activation = "relu";
  std::vector<double> kappa_grid{0.0, 0.003, 0.01, 0.03, 0.05, 0.1};
  double cutoff = 1e-4;
};

Outcome run_nodes(const Common& c, const NodeArgs& a) {
  const auto data = a.data.empty() ? data::nonnegative_mixture(a.n, a.d, a.classes, 3.0, 1.0, c.seed)
                                   : data::load_labeled_csv(a.data);
  NodeSparsityConfig cfg;
  cfg.train = train_config(c, OptimizerKind::sgd, 0.5, 3000);
  cfg.cutoff = a.cutoff;
  cfg.threads = worker_threads();
  const auto spec = MlpSpec::make({data.X.cols(), a.hidden, data.classes}, parse_activation(a.activation), false);
  auto sweep = run_node_sparsity_sweep(spec, data, a.kappa_grid, cfg);
  Outcome o;
  o.report = std::move(sweep.report);
  o.report.config["data"] = a.data.empty() ? "synthetic" : a.data;
  o.report.config["kappa_grid"] = join(a.kappa_grid);
  return o;
}

// prune ---------------------------------------------------------------------

struct PruneArgs {
  std::string data;
  std::size_t n = 1200;
  std::size_t d = 20;
  std::size_t classes = 4;
  std::size_t clusters = 8;
  std::vector<std::size_t> hidden{64, 64};
  std::string activation = "relu";
  PruneConfig cfg;
};

Outcome run_prune(const Common& c, PruneArgs a) {
  const auto all = a.data.empty() ? data::clustered_classes(a.n, a.d, a.clusters, a.classes, 2.5, 1.0, c.seed)
                                  : data::load_labeled_csv(a.data);
  const auto split = data::split_indices(all.samples(), 0.5, 0.0, c.seed + 1);
  const auto train = all.subset(split.train), test = all.subset(split.test);
  std::vector<std::size_t> widths{all.X.cols()};
  widths.insert(widths.end(), a.hidden.begin(), a.hidden.end());
  widths.push_back(all.classes);
  a.cfg.kappa = or_default(c.kappa, a.cfg.kappa);
  a.cfg.train = train_config(c, OptimizerKind::lbfgs, 1.0, 800);
  auto curve = run_prune_finetune(MlpSpec::make(widths, parse_activation(a.activation), true), train, test, a.cfg);
  Outcome o;
  o.report = std::move(curve.report);
  o.report.config["data"] = a.data.empty() ? "synthetic" : a.data;
  o.report.config["hidden"] = join(a.hidden);
  std::ostringstream ss;
  ss << "dense accuracy " << curve.dense_accuracy << ", spred before pruning " << curve.unpruned_accuracy << "\n";
  ss << "threshold,kept,compression_ratio,pruned_accuracy,finetuned_accuracy,mask_at_init_accuracy\n";
  std::ostringstream csv;
  csv << "threshold,kept,compression_ratio,pruned_accuracy,finetuned_accuracy,mask_at_init_accuracy,degenerate\n";
  for (const auto& p : curve.points) {
    ss << format_double(p.threshold) << ',' << p.kept << ',' << p.compression_ratio << ',' << p.pruned_accuracy << ','
       << p.finetuned_accuracy << ',' << p.mask_at_init_accuracy << (p.degenerate ? " (all weights removed)" : "")
       << "\n";
    csv << format_double(p.threshold) << ',' << p.kept << ',' << format_double(p.compression_ratio) << ','
        << format_double(p.pruned_accuracy) << ',' << format_double(p.finetuned_accuracy) << ','
        << format_double(p.mask_at_init_accuracy) << ',' << (p.degenerate ? 1 : 0) << "\n";
  }
  o.text = ss.str();
  o.extra_files["curve.csv"] = csv.str();
  return o;
}

// verify --------------------------------------------------------------------

Outcome run_verify(const Common& c, std::size_t trials) {
  VerifyOptions opt;
  opt.seed = c.seed;
  opt.trials = trials;
  const auto results = run_invariant_suite(opt);
  Outcome o;
  o.report.task = "verify";
  o.report.seed = c.seed;
  o.report.config["trials"] = std::to_string(trials);
  std::ostringstream ss;
  bool all = true;
  for (const auto& r : results) {
    ss << (r.passed ? "PASS " : "FAIL ") << r.name << " (worst " << format_double(r.worst) << ", tolerance "
       << format_double(r.tolerance) << ", " << r.trials << " trials)";
    if (!r.detail.empty()) ss << " " << r.detail;
    ss << "\n";
    o.report.metrics[r.name + " worst"] = std::isfinite(r.worst) ? r.worst : -1.0;
    o.report.metrics[r.name + " passed"] = r.passed ? 1.0 : 0.0;
    all = all && r.passed;
  }
  o.report.converged = all;
  o.text = ss.str();
  o.code = all ? kExitOk : kExitNumerical;
  return o;
}

// Inserts config-file arguments after the subcommand, skipping keys given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path || args.empty()) return args;
  auto key = [](const std::string& a) { return a.substr(0, a.find('=')); };
  std::set<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i].rfind("--", 0) == 0) given.insert(key(args[i]));
  }
  std::vector<std::string> out{args.front()};
  for (auto& a : read_config_file(*path)) {
    if (key(a) == "--config") throw std::invalid_argument("config files cannot include other config files");
    if (!given.count(key(a))) out.push_back(std::move(a));
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparsity by redundancy: L1 problems solved with factored parameters and gradient descent"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Common common;
  LassoArgs lasso;
  BenchArgs bench;
  SparseCodeArgs sparse;
  FeatureArgs feat;
  NodeArgs nodes;
  PruneArgs prune;
  std::size_t trials = 200;

  auto* l = app.add_subcommand("lasso", "Spred or naive L1 on a lasso problem");
  add_common(l, common);
  l->add_option("--d", lasso.d, "Features")->capture_default_str();
  l->add_option("--n", lasso.n, "Samples (default d for orthonormal, 2d otherwise)");
  l->add_flag("--orthonormal", lasso.orthonormal, "Orthonormal design with a closed-form solution");
  l->add_option("--sparsity", lasso.sparsity, "Fraction of zeros in the planted weights (orthonormal)")
      ->capture_default_str();
  l->add_option("--noise", lasso.noise, "Noise standard deviation")->capture_default_str();
  l->add_option("--k-true", lasso.k_true, "Planted nonzeros (gaussian design, default d/5)");
  l->add_option("--data", lasso.data, "CSV with feature columns and a final target column");
  l->add_option("--solver", lasso.solver, "spred or l1")->check(CLI::IsMember({"spred", "l1"}))->capture_default_str();
  l->add_option("--lr-grid", lasso.lr_grid, "Learning rates to try; the lowest l1 objective wins")->delimiter(',');

  auto* b = app.add_subcommand("lasso-bench", "Wall clock to the 75/90/100% zero-rate milestones");
  add_common(b, common);
  b->add_option("--dims", bench.dims, "Dimensions")->delimiter(',')->capture_default_str();
  b->add_option("--solvers", bench.solvers, "spred, cd, ista")->delimiter(',')->capture_default_str();
  b->add_option("--samples", bench.options.samples, "Samples")->capture_default_str();
  b->add_option("--k-true", bench.options.k_true, "Planted nonzeros")->capture_default_str();
  b->add_option("--noise", bench.options.noise_std, "Noise standard deviation")->capture_default_str();
  b->add_option("--budget", bench.options.budget_seconds, "Seconds per solver and dimension")->capture_default_str();
  b->footer("--kappa is a fraction of max |X^T y| here (default 0.1).");

  auto* s = app.add_subcommand("sparse-code", "Dictionary learning on image patches");
  add_common(s, common);
  s->add_option("--image", sparse.image, "PGM image (default: synthetic texture)");
  s->add_option("--image-size", sparse.image_size, "Synthetic texture side")->capture_default_str();
  s->add_option("--patch", sparse.patch, "Patch side")->capture_default_str();
  s->add_option("--patches", sparse.patches, "Number of patches")->capture_default_str();
  s->add_option("--k", sparse.cfg.k, "Dictionary size")->capture_default_str();
  s->add_option("--epochs", sparse.cfg.epochs, "Epochs")->capture_default_str();
  s->add_option("--batch", sparse.batch, "Patches per batch (0: all)")->capture_default_str();
  s->add_option("--steps-per-batch", sparse.cfg.steps_per_batch, "Code steps per batch")->capture_default_str();
  s->add_option("--dictionary-steps", sparse.cfg.dictionary_steps, "Dictionary steps per batch")->capture_default_str();
  s->add_flag("--normalize-rows", sparse.cfg.normalize_rows, "Rescale code rows to unit norm after each epoch");

  auto* f = app.add_subcommand("feature-select", "Shared-mask ensemble feature selection");
  add_common(f, common);
  f->add_option("--data", feat.data, "Labeled CSV (last column the class)");
  f->add_option("--n", feat.n, "Samples")->capture_default_str();
  f->add_option("--d", feat.d, "Features")->capture_default_str();
  f->add_option("--k-true", feat.k_true, "Relevant features")->capture_default_str();
  f->add_option("--nonlinearity", feat.nonlinearity, "linear, xor or mixed")->capture_default_str();
  f->add_option("--margin", feat.margin, "Label margin in score standard deviations")->capture_default_str();
  f->add_option("--model", feat.model, "ensemble, independent, mlp_wd or mlp_l1")->capture_default_str();
  f->add_option("--hidden", feat.hidden, "Hidden widths")->delimiter(',')->capture_default_str();
  f->add_option("--activation", feat.activation, "relu, swish, tanh, ...")->capture_default_str();
  f->add_option("--kappa-grid", feat.kappa_grid, "Kappas tuned on the dev split")->delimiter(',');
  f->add_option("--lr-grid", feat.lr_grid, "Learning rates tuned on the dev split")->delimiter(',');
  f->add_option("--eval-every", feat.eval_every, "Steps between dev evaluations")->capture_default_str();
  f->add_option("--patience", feat.patience, "Evaluations without improvement before stopping")
      ->capture_default_str();

  auto* n = app.add_subcommand("node-sparsity", "Dead hidden units under weight decay across a kappa grid");
  add_common(n, common);
  n->add_option("--data", nodes.data, "Labeled CSV (last column the class)");
  n->add_option("--n", nodes.n, "Samples")->capture_default_str();
  n->add_option("--d", nodes.d, "Input width")->capture_default_str();
  n->add_option("--classes", nodes.classes, "Classes")->capture_default_str();
  n->add_option("--hidden", nodes.hidden, "Hidden width")->capture_default_str();
  n->add_option("--activation", nodes.activation, "relu or swish")->capture_default_str();
  n->add_option("--kappa-grid", nodes.kappa_grid, "Weight decay grid")->delimiter(',')->capture_default_str();
  n->add_option("--cutoff", nodes.cutoff, "Dead-unit cutoff on mean |outgoing weight|")->capture_default_str();

  auto* p = app.add_subcommand("prune", "Train with spred, threshold, finetune and retrain from initialization");
  add_common(p, common);
  p->add_option("--data", prune.data, "Labeled CSV (last column the class)");
  p->add_option("--n", prune.n, "Samples (half train, half test)")->capture_default_str();
  p->add_option("--d", prune.d, "Input width")->capture_default_str();
  p->add_option("--classes", prune.classes, "Classes")->capture_default_str();
  p->add_option("--clusters", prune.clusters, "Mixture components, labelled cluster % classes")
      ->capture_default_str();
  p->add_option("--hidden", prune.hidden, "Hidden widths")->delimiter(',')->capture_default_str();
  p->add_option("--activation", prune.activation, "Hidden activation")->capture_default_str();
  p->add_option("--thresholds", prune.cfg.thresholds, "Relative thresholds")->delimiter(',');
  p->add_option("--grid-points", prune.cfg.grid_points, "Log-spaced thresholds when none are given")
      ->capture_default_str();
  prune.cfg.finetune_steps = 150;
  prune.cfg.retrain_steps = 150;
  p->add_option("--finetune-steps", prune.cfg.finetune_steps, "Finetuning steps per threshold")
      ->capture_default_str();
  p->add_option("--retrain-steps", prune.cfg.retrain_steps, "Steps for dense and mask-at-init retraining")
      ->capture_default_str();
  prune.cfg.grid_points = 6;

  auto* v = app.add_subcommand("verify", "Run the invariant suite");
  add_common(v, common);
  v->add_option("--trials", trials, "Random instances per invariant")->capture_default_str();

  try {
    auto args = expand_config(raw);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    Outcome o;
    if (l->parsed()) o = run_lasso(common, lasso);
    else if (b->parsed()) o = run_bench(common, bench);
    else if (s->parsed()) o = run_sparse(common, sparse);
    else if (f->parsed()) o = run_features(common, feat);
    else if (n->parsed()) o = run_nodes(common, nodes);
    else if (p->parsed()) o = run_prune(common, prune);
    else o = run_verify(common, trials);
    return finish(std::move(o), common, out, err);
  } catch (const ReportIoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const data::DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace spred
