// Batch CLI for the tensor completion engine.
//
//   cptc synth         generate a synthetic low-Tucker-rank instance
//   cptc complete      run a completion method on COO/ratings data
//   cptc bench-mttkrp  time the sparse MTTKRP against the naive path
//   cptc eval          RMSE of stored factors against a COO file
//
// Every run is reproducible given its seeds. Outputs are plain text; the
// formats are documented in the README and in include/cptc/io.hpp.

#include "cptc/cptc.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

namespace fs = std::filesystem;
using namespace cptc;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct SynthArgs {
  std::vector<int> dims;
  std::vector<int> tucker_rank;
  double p = 0.3;
  double snr_db = 0;
  bool has_snr = false;
  double scale = 1.0;
  std::uint64_t seed = 0;
  std::int64_t test_subsample = -1;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.dims = Dims(a.dims);
  cfg.tucker_rank = a.tucker_rank;
  cfg.sampling_rate = a.p;
  if (a.has_snr) cfg.snr_db = a.snr_db;
  cfg.scale = a.scale;
  cfg.seed = a.seed;
  if (a.test_subsample >= 0) cfg.test_subsample = a.test_subsample;

  const SynthResult res = generate(cfg);
  fs::create_directories(a.out);
  write_coo((fs::path(a.out) / "train.coo").string(), res.train);
  write_coo((fs::path(a.out) / "test.coo").string(), res.test);
  write_manifest((fs::path(a.out) / "manifest.json").string(), cfg, res.sigma_n);
  std::printf("wrote %s: train.coo (%lld entries), test.coo (%lld entries), manifest.json\n",
              a.out.c_str(), static_cast<long long>(res.train.nnz()),
              static_cast<long long>(res.test.nnz()));
  if (cfg.snr_db) std::printf("noise sigma_n = %.17g\n", res.sigma_n);
  return 0;
}

struct CompleteArgs {
  std::string in_dir, train_file, test_file, ratings_file;
  double split = 0.8;
  std::uint64_t split_seed = 0;
  std::string method = "rgd";
  std::string rule = "linemin";
  int rank = 0;
  double lambda = 0;
  double lambda_over_p = 0;
  bool has_lambda_over_p = false;
  double delta = 0;
  bool has_delta = false;
  double grad_tol = 1e-7;
  double relchg_tol = 1e-6;
  int max_iters = 1000;
  double time_budget = 0;  // 0 = unlimited
  std::uint64_t init_seed = 0;
  int threads = 0;
  bool safeguard = false;
  std::string out;
};

int run_complete(const CompleteArgs& a) {
  ObservedTensor train;
  std::optional<ObservedTensor> test;
  std::optional<std::int64_t> week_epoch;

  if (!a.in_dir.empty()) {
    train = read_coo((fs::path(a.in_dir) / "train.coo").string());
    const fs::path tp = fs::path(a.in_dir) / "test.coo";
    if (fs::exists(tp)) test = read_coo(tp.string());
  } else if (!a.train_file.empty()) {
    train = read_coo(a.train_file);
    if (!a.test_file.empty()) test = read_coo(a.test_file);
  } else {
    RatingsData ratings = parse_ratings(a.ratings_file);
    week_epoch = ratings.week_epoch;
    auto [tr, te] = split_train_test(ratings.tensor, a.split, a.split_seed);
    train = std::move(tr);
    test = std::move(te);
  }
  if (train.nnz() == 0) throw std::invalid_argument("training set is empty");
  if (test && test->nnz() == 0) test.reset();

  OptimizerConfig cfg;
  cfg.method = parse_method(a.method);
  cfg.rule = parse_step_rule(a.rule);
  cfg.lambda = a.has_lambda_over_p ? a.lambda_over_p / train.sampling_rate() : a.lambda;
  cfg.grad_tol = a.grad_tol;
  cfg.relchg_tol = a.relchg_tol;
  cfg.max_iters = a.max_iters;
  if (a.time_budget > 0) cfg.time_budget_seconds = a.time_budget;
  if (a.has_delta) cfg.delta = a.delta;
  cfg.rbb_safeguard = a.safeguard;
  cfg.seed = a.init_seed;
  cfg.threads = a.threads;

  const FactorSet init = init_factors(train.dims(), a.rank, a.init_seed);
  const RunResult res = run(train, cfg, init, test ? &*test : nullptr);

  fs::create_directories(a.out);
  write_history_csv((fs::path(a.out) / "history.csv").string(), res.history);
  write_summary_json((fs::path(a.out) / "summary.json").string(), cfg, a.rank, res, week_epoch);
  write_factors((fs::path(a.out) / "factors.txt").string(), res.factors);

  const IterationRecord& last = res.history.back();
  std::printf("method=%s rule=%s stop=%s iters=%d train_rmse=%.6g", method_name(cfg.method),
              step_rule_name(cfg.rule), stop_reason_name(res.stop_reason), last.t, last.train_rmse);
  if (!std::isnan(last.test_rmse)) std::printf(" test_rmse=%.6g", last.test_rmse);
  std::printf(" seconds=%.3f\n", last.seconds);
  for (const std::string& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

struct BenchArgs {
  std::vector<int> dims{200, 200, 200};
  std::int64_t omega = 1'000'000;
  int rank = 15;
  std::uint64_t seed = 0;
  int reps = 3;
  int threads = 0;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  const Dims dims(a.dims);
  if (a.omega < 1 || a.omega > dims.total())
    throw std::invalid_argument("omega must be in [1, prod(dims)]");

  std::mt19937_64 rng(a.seed);
  const int k = dims.order();
  std::unordered_set<std::int64_t> cells;
  cells.reserve(static_cast<std::size_t>(a.omega) * 2);
  std::uniform_int_distribution<std::int64_t> pick(0, dims.total() - 1);
  while (static_cast<std::int64_t>(cells.size()) < a.omega) cells.insert(pick(rng));

  std::vector<std::int32_t> idx;
  idx.reserve(static_cast<std::size_t>(a.omega) * static_cast<std::size_t>(k));
  std::vector<double> val(static_cast<std::size_t>(a.omega));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::int64_t cell : cells) {
    std::int64_t rest = cell;
    for (int j = 0; j < k; ++j) {
      idx.push_back(static_cast<std::int32_t>(rest % dims[j]) + 1);
      rest /= dims[j];
    }
  }
  for (double& v : val) v = gauss(rng);
  const ObservedTensor data(dims, std::move(idx), std::move(val));
  const FactorSet U = init_factors(dims, a.rank, a.seed + 1);
  const std::vector<double> resid = residual_at_observed(U, data, a.threads);

  FILE* out = a.out.empty() ? stdout : std::fopen(a.out.c_str(), "w");
  if (!out) throw std::runtime_error("cannot open for writing: " + a.out);
  std::fprintf(out, "kernel,mode,omega_size,rank,seconds\n");

  const auto time_best = [&](auto&& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < a.reps; ++r) {
      const double t0 = now_seconds();
      fn();
      best = std::min(best, now_seconds() - t0);
    }
    return best;
  };

  for (int mode = 1; mode <= k; ++mode) {
    const double tf = time_best([&] { sparse_mttkrp(resid, data, U, mode, a.threads); });
    std::fprintf(out, "fast_mttkrp,%d,%lld,%d,%.17g\n", mode, static_cast<long long>(a.omega),
                 a.rank, tf);
  }
  for (int mode = 1; mode <= k; ++mode) {
    const double tn = time_best([&] { naive_mttkrp(resid, data, U, mode); });
    std::fprintf(out, "naive_mttkrp,%d,%lld,%d,%.17g\n", mode, static_cast<long long>(a.omega),
                 a.rank, tn);
  }
  const ProblemConfig pc = make_problem_config(data, a.rank, 0.0);
  const double tfg = time_best([&] {
    const std::vector<double> r = residual_at_observed(U, data, a.threads);
    const FactorSet D = euclidean_gradient_from_residual(r, data, U, pc, a.threads);
    for (int mode = 1; mode <= k; ++mode) gram_hadamard(U, mode);
  });
  std::fprintf(out, "fast_gradient,0,%lld,%d,%.17g\n", static_cast<long long>(a.omega), a.rank, tfg);
  const double tng = time_best([&] { naive_gradient_path(U, data); });
  std::fprintf(out, "naive_gradient,0,%lld,%d,%.17g\n", static_cast<long long>(a.omega), a.rank, tng);

  if (out != stdout) std::fclose(out);
  return 0;
}

struct EvalArgs {
  std::string factors, data;
};

int run_eval(const EvalArgs& a) {
  const FactorSet U = read_factors(a.factors);
  const ObservedTensor data = read_coo(a.data);
  std::printf("rmse %.17g\n", rmse(U, data));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse low-rank tensor completion via preconditioned first-order methods"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic instance");
  synth_cmd->add_option("--dims", sa.dims, "Mode sizes, e.g. 50,50,60")->required()->delimiter(',');
  synth_cmd->add_option("--tucker-rank", sa.tucker_rank, "Target multilinear rank, e.g. 3,5,7")
      ->required()
      ->delimiter(',');
  synth_cmd->add_option("--p", sa.p, "Observation probability in (0,1)")->required();
  CLI::Option* snr_opt = synth_cmd->add_option("--snr-db", sa.snr_db, "Noise SNR in dB (omit for noiseless)");
  synth_cmd->add_option("--scale", sa.scale, "Multiplier applied to the emitted tensor")->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--test-subsample", sa.test_subsample, "Keep at most this many test entries");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();

  CompleteArgs ca;
  CLI::App* complete_cmd = app.add_subcommand("complete", "Run a completion method");
  CLI::Option* in_opt = complete_cmd->add_option("--in", ca.in_dir, "Directory with train.coo (+ optional test.coo)");
  CLI::Option* train_opt = complete_cmd->add_option("--train", ca.train_file, "Training COO file");
  complete_cmd->add_option("--test", ca.test_file, "Test COO file")->needs(train_opt);
  CLI::Option* ratings_opt = complete_cmd->add_option("--ratings", ca.ratings_file,
                                                      "Ratings file (UserID::MovieID::Rating::Timestamp)");
  in_opt->excludes(train_opt)->excludes(ratings_opt);
  train_opt->excludes(ratings_opt);
  complete_cmd->add_option("--split", ca.split, "Train fraction for ratings input")->capture_default_str();
  complete_cmd->add_option("--split-seed", ca.split_seed, "Seed for the ratings split")->capture_default_str();
  complete_cmd->add_option("--method", ca.method, "rgd, rcg, euclid_gd, euclid_cg")
      ->capture_default_str()
      ->check(CLI::IsMember({"rgd", "rcg", "euclid_gd", "euclid_cg"}));
  complete_cmd->add_option("--rule", ca.rule, "linemin, armijo, rbb1, rbb2")
      ->capture_default_str()
      ->check(CLI::IsMember({"linemin", "armijo", "rbb1", "rbb2"}));
  complete_cmd->add_option("--rank", ca.rank, "CP rank R")->required()->check(CLI::PositiveNumber);
  CLI::Option* lambda_opt = complete_cmd->add_option("--lambda", ca.lambda, "Regularization weight")->capture_default_str();
  complete_cmd->add_option("--lambda-over-p", ca.lambda_over_p, "Regularization as a multiple of 1/p")
      ->excludes(lambda_opt);
  CLI::Option* delta_opt = complete_cmd->add_option("--delta", ca.delta, "Preconditioner shift (default: scale-aware)");
  complete_cmd->add_option("--grad-tol", ca.grad_tol, "Gradient-norm stop tolerance")->capture_default_str();
  complete_cmd->add_option("--relchg-tol", ca.relchg_tol, "Relative train-RMSE change stop tolerance")->capture_default_str();
  complete_cmd->add_option("--max-iters", ca.max_iters, "Iteration cap")->capture_default_str()->check(CLI::NonNegativeNumber);
  complete_cmd->add_option("--time-budget", ca.time_budget, "Wall-clock budget in seconds (0 = unlimited)")->capture_default_str();
  complete_cmd->add_option("--init-seed", ca.init_seed, "Seed for the Gaussian initialization")->capture_default_str();
  complete_cmd->add_option("--threads", ca.threads, "Kernel threads (0 = CPTC_THREADS env or 1)")->capture_default_str();
  complete_cmd->add_flag("--safeguard", ca.safeguard, "Wrap RBB stepsizes in an Armijo backtracking search");
  complete_cmd->add_option("--out", ca.out, "Output directory")->required();

  BenchArgs ba;
  CLI::App* bench_cmd = app.add_subcommand("bench-mttkrp", "Time sparse kernels against the naive path");
  bench_cmd->add_option("--dims", ba.dims, "Mode sizes")->capture_default_str()->delimiter(',');
  bench_cmd->add_option("--omega", ba.omega, "Number of observed entries")->capture_default_str();
  bench_cmd->add_option("--rank", ba.rank, "CP rank R")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", ba.seed, "Generator seed")->capture_default_str();
  bench_cmd->add_option("--reps", ba.reps, "Repetitions; best time wins")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--threads", ba.threads, "Kernel threads")->capture_default_str();
  bench_cmd->add_option("--out", ba.out, "Output CSV (default stdout)");

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "RMSE of stored factors against a COO file");
  eval_cmd->add_option("--factors", ea.factors, "factors.txt path")->required();
  eval_cmd->add_option("--data", ea.data, "COO file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      sa.has_snr = snr_opt->count() > 0;
      return run_synth(sa);
    }
    if (complete_cmd->parsed()) {
      if (in_opt->count() + train_opt->count() + ratings_opt->count() != 1)
        throw std::invalid_argument("exactly one of --in, --train, --ratings is required");
      ca.has_lambda_over_p = complete_cmd->count("--lambda-over-p") > 0;
      ca.has_delta = delta_opt->count() > 0;
      return run_complete(ca);
    }
    if (bench_cmd->parsed()) return run_bench(ba);
    if (eval_cmd->parsed()) return run_eval(ea);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
