// invlab: round-trip, bench, estimator-statistics and schedule dumps from the
// command line. Flags override values loaded with --config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "invlab/harness.hpp"

namespace {

using namespace invlab;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> trials;
  std::optional<int> dim;
  std::optional<int> steps;
  std::optional<int> offset;
  std::vector<std::string> methods;
  std::optional<std::string> schedule;
  std::optional<int> T;
  std::optional<std::string> model;
  std::optional<std::string> gmm_file;
  std::optional<int> components;
  std::optional<double> variance;
  std::vector<double> gamma;
  std::optional<double> rho;
  std::optional<std::string> coupling;
  bool no_error = false;
  std::optional<double> psnr_peak;
  std::optional<int> bins;
  std::optional<int> threads;
  std::optional<std::string> csv, bench_csv, stats_json, hist_prefix, trajectories;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON experiment config");
  app->add_option("--seed", o.seed);
  app->add_option("--trials", o.trials);
  app->add_option("--dim", o.dim);
  app->add_option("--steps", o.steps, "inversion steps N");
  app->add_option("--offset", o.offset, "first grid timestep");
  app->add_option("--method", o.methods, "method string, repeatable (replaces the config list)");
  app->add_option("--schedule", o.schedule, "linear-beta | scaled-linear-beta | cosine");
  app->add_option("--T", o.T, "schedule length");
  app->add_option("--model", o.model, "gaussian | gmm | gmm-random");
  app->add_option("--gmm-file", o.gmm_file);
  app->add_option("--components", o.components);
  app->add_option("--variance", o.variance, "gaussian data variance");
  app->add_option("--gamma", o.gamma, "error variance; one value or one per grid position");
  app->add_option("--rho", o.rho, "error correlation between steps");
  app->add_option("--coupling", o.coupling, "ar1 | constant");
  app->add_flag("--no-error", o.no_error, "disable error injection");
  app->add_option("--psnr-peak", o.psnr_peak);
  app->add_option("--bins", o.bins);
  app->add_option("--threads", o.threads, "worker count (0: INVLAB_THREADS or hardware)");
  app->add_option("--csv", o.csv);
  app->add_option("--bench-csv", o.bench_csv);
  app->add_option("--json", o.stats_json, "stats report path");
  app->add_option("--hist-prefix", o.hist_prefix);
  app->add_option("--trajectories", o.trajectories, "JSON-lines dump of trial 0");
}

ExperimentConfig load(const Overrides& o, std::vector<std::string> default_methods) {
  ExperimentConfig c;
  if (!o.config.empty()) {
    c = parse_config(o.config);
  } else {
    c.methods = std::move(default_methods);
  }
  if (o.seed) c.seed = *o.seed;
  if (o.trials) c.trials = *o.trials;
  if (o.dim) c.dim = *o.dim;
  if (o.steps) c.steps = *o.steps;
  if (o.offset) c.offset = *o.offset;
  if (!o.methods.empty()) c.methods = o.methods;
  if (o.schedule) c.schedule_kind = schedule_kind_from_string(*o.schedule);
  if (o.T) c.schedule_steps = *o.T;
  if (o.model) {
    if (*o.model == "gaussian") c.model.type = ModelType::Gaussian;
    else if (*o.model == "gmm") c.model.type = ModelType::Gmm;
    else if (*o.model == "gmm-random") c.model.type = ModelType::GmmRandom;
    else throw Error(ErrorCode::ConfigError, "unknown model " + *o.model);
  }
  if (o.gmm_file) {
    c.model.type = ModelType::Gmm;
    c.model.file = *o.gmm_file;
    std::ifstream in(*o.gmm_file);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + *o.gmm_file);
    std::stringstream ss;
    ss << in.rdbuf();
    c.model.gmm = gmm_from_json(ss.str());
  }
  if (o.components) c.model.components = *o.components;
  if (o.variance) c.model.variance = *o.variance;
  if (!o.gamma.empty() || o.rho || o.coupling) {
    if (!c.error) c.error = ErrorModel{};
    if (!o.gamma.empty()) c.error->gamma = o.gamma;
    if (o.rho) c.error->rho = *o.rho;
    if (o.coupling) c.error->coupling = error_coupling_from_string(*o.coupling);
  }
  if (o.no_error) c.error.reset();
  if (c.error) c.error->seed = c.seed;
  if (o.psnr_peak) c.psnr_peak = *o.psnr_peak;
  if (o.bins) c.bins = *o.bins;
  if (o.threads) c.threads = *o.threads;
  if (o.csv) c.output.csv = *o.csv;
  if (o.bench_csv) c.output.bench_csv = *o.bench_csv;
  if (o.stats_json) c.output.stats_json = *o.stats_json;
  if (o.hist_prefix) c.output.histogram_prefix = *o.hist_prefix;
  if (o.trajectories) c.output.trajectories = *o.trajectories;
  c.validate();
  return c;
}

void print_summary(const MetricsReport& report) {
  std::printf("%-28s %10s %14s %12s %10s %8s\n", "method", "nfe", "mse_mean", "psnr_mean", "wall_ms", "failed");
  for (const auto& s : report.summary) {
    std::printf("%-28s %10.1f %14.6e %12.3f %10.3f %8d\n", s.method.c_str(), s.nfe.mean, s.mse.mean, s.psnr.mean,
                s.wall_ms.mean, s.failures);
  }
}

void report_failures(const MetricsReport& report) {
  for (const auto& r : report.rows) {
    if (r.failed) std::fprintf(stderr, "%s trial %lld: %s\n", r.method.c_str(), (long long)r.trial, r.message.c_str());
  }
}

int cmd_roundtrip(const Overrides& o) {
  ExperimentConfig c = load(o, {"ife"});
  MetricsReport report = run_roundtrip(c);
  print_summary(report);
  report_failures(report);
  if (!c.output.csv.empty()) emit_csv(report, c.output.csv);
  if (!c.output.trajectories.empty()) write_text_file(c.output.trajectories, trajectories_jsonl(c));
  return report.diverged() ? kExitDivergence : 0;
}

int cmd_bench(const Overrides& o, int max_extra) {
  ExperimentConfig c = load(o, default_bench_methods(max_extra));
  BenchTable table = run_bench(c);
  std::printf("%-28s %6s %8s %10s %14s %14s %12s %10s %6s\n", "method", "extra", "nfe/step", "nfe", "mse_mean",
              "mse_std", "psnr_mean", "wall_ms", "ledger");
  bool ledger_ok = true;
  for (const auto& r : table.rows) {
    std::printf("%-28s %6d %8.3f %10.1f %14.6e %14.6e %12.3f %10.3f %6s\n", r.method.c_str(), r.extra_iters,
                r.nfe_per_step, r.nfe, r.mse_mean, r.mse_std, r.psnr_mean, r.wall_ms_mean,
                r.expected_nfe ? (r.ledger_ok ? "ok" : "BAD") : "-");
    ledger_ok = ledger_ok && r.ledger_ok;
  }
  report_failures(table.trials);
  if (!c.output.bench_csv.empty()) write_text_file(c.output.bench_csv, bench_csv(table));
  if (!c.output.csv.empty()) emit_csv(table.trials, c.output.csv);
  if (!ledger_ok) {
    std::fprintf(stderr, "nfe ledger mismatch\n");
    return 1;
  }
  return table.trials.diverged() ? kExitDivergence : 0;
}

int cmd_stats(const Overrides& o) {
  ExperimentConfig c = load(o, {"ife"});
  if (!c.error) c.error = ErrorModel{};
  StatsReport report = run_error_stats(stats_config(c));
  std::printf("trials=%lld dim=%d steps=%d rho=%g\n", (long long)report.trials, report.dim, report.steps, report.rho);
  std::printf("%-10s %14s %14s %14s\n", "estimator", "pooled_mean", "pooled_var", "theory_var@2");
  for (const auto& e : report.estimators) {
    double theory = e.steps.size() > 1 ? e.steps[1].theory_variance : e.steps.front().theory_variance;
    std::printf("%-10s %14.6e %14.6e %14.6e\n", std::string(to_string(e.estimator)).c_str(), e.pooled_mean,
                e.pooled_variance, theory);
  }
  if (!c.output.stats_json.empty()) write_text_file(c.output.stats_json, stats_to_json(report));
  if (!c.output.histogram_prefix.empty()) write_histograms(report, c.output.histogram_prefix);
  return 0;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Divergence:
    case ErrorCode::NoConvergence:
    case ErrorCode::NonFinite: return kExitDivergence;
    default: return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion inversion numerics lab"};
  app.require_subcommand(1);

  Overrides rt, bench, stats;
  auto* roundtrip_cmd = app.add_subcommand("roundtrip", "invert, denoise back and score the reconstruction");
  add_common(roundtrip_cmd, rt);

  int max_extra = 4;
  auto* bench_cmd = app.add_subcommand("bench", "fixed-point iteration sweep against IFE");
  add_common(bench_cmd, bench);
  bench_cmd->add_option("--max-extra", max_extra, "default sweep covers fp:k=0..max-extra");

  auto* stats_cmd = app.add_subcommand("stats", "estimation-error statistics of the fixed-point estimators");
  add_common(stats_cmd, stats);

  std::string kind = "scaled-linear-beta", out;
  int T = 1000;
  ScheduleParams params;
  auto* dump_cmd = app.add_subcommand("dump-schedule", "write an alpha-bar table as JSON");
  dump_cmd->add_option("--kind", kind, "linear-beta | scaled-linear-beta | cosine");
  dump_cmd->add_option("--T", T);
  dump_cmd->add_option("--beta-start", params.beta_start);
  dump_cmd->add_option("--beta-end", params.beta_end);
  dump_cmd->add_option("--cosine-offset", params.cosine_offset);
  dump_cmd->add_option("--max-beta", params.max_beta);
  dump_cmd->add_option("--out", out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*roundtrip_cmd) return cmd_roundtrip(rt);
    if (*bench_cmd) return cmd_bench(bench, max_extra);
    if (*stats_cmd) return cmd_stats(stats);
    if (*dump_cmd) {
      std::string json = schedule_to_json(build_schedule(schedule_kind_from_string(kind), T, params));
      if (out.empty()) {
        std::cout << json << "\n";
      } else {
        write_text_file(out, json);
      }
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "invlab: %s\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "invlab: %s\n", e.what());
    return 1;
  }
  return 0;
}
