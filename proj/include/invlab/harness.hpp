#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invlab/analysis.hpp"
#include "invlab/inversion.hpp"
#include "invlab/models.hpp"
#include "invlab/schedule.hpp"

namespace invlab {

// ---------------------------------------------------------------------------
// Metrics

/// Mean of squared differences.
double mse(const Latent& a, const Latent& b);

/// Reported in place of +inf when the inputs match exactly.
inline constexpr double kPsnrCap = 300.0;

/// 10 log10(peak^2 / mse), capped at kPsnrCap.
double psnr(const Latent& a, const Latent& b, double peak);

// ---------------------------------------------------------------------------
// Configuration

enum class ModelType { Gaussian, Gmm, GmmRandom };

std::string_view to_string(ModelType type);

struct ModelSpec {
  ModelType type = ModelType::GmmRandom;
  double variance = 1.0;  // Gaussian: data ~ N(0, variance I)
  std::string file;       // Gmm: mixture JSON path
  GaussianMixtureModel gmm;  // Gmm: loaded from `file`
  // GmmRandom: a fresh mixture per trial.
  int components = 3;
  double mean_scale = 2.0;
  double variance_min = 0.1;
  double variance_max = 0.5;

  bool operator==(const ModelSpec&) const = default;
};

struct OutputSpec {
  std::string csv;               // per-trial metrics
  std::string bench_csv;         // aggregated bench table
  std::string stats_json;        // StatsReport
  std::string histogram_prefix;  // <prefix>_<estimator>_<histogram>.csv
  std::string trajectories;      // JSON lines of trial 0 per method

  bool operator==(const OutputSpec&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::int64_t trials = 1;
  int dim = 8;
  std::vector<std::string> methods;

  ScheduleKind schedule_kind = ScheduleKind::ScaledLinearBeta;
  int schedule_steps = 1000;
  ScheduleParams schedule_params;
  int steps = 50;
  int offset = 1;

  ModelSpec model;
  /// Absent: the predictor is exact. The error seed is always `seed`.
  std::optional<ErrorModel> error;

  std::optional<double> psnr_peak;
  int bins = 50;
  int threads = 0;
  OutputSpec output;

  /// Throws ConfigError on values that parse but cannot run.
  void validate() const;
  NoiseSchedule make_schedule() const;
  std::vector<InversionMethod> parsed_methods() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Strict JSON schema: required "seed", "trials", "dim", "methods"; unknown
/// keys and wrong types are SchemaViolation errors naming the field path.
/// Relative GMM file paths resolve against `base_dir`.
ExperimentConfig config_from_json(std::string_view text, const std::string& base_dir = ".");
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig parse_config(const std::string& path);

// ---------------------------------------------------------------------------
// Runs

struct TrialRecord {
  std::string method;
  std::int64_t trial = 0;
  std::uint64_t seed = 0;  // instance seed of this trial
  int dim = 0;
  int steps = 0;
  long nfe = 0;            // predictor calls during inversion
  double mse = 0.0;
  double psnr = 0.0;
  double wall_ms = 0.0;    // inversion only
  std::vector<double> deviation;  // per grid position: RMS(z_inv - z_denoised)
  bool failed = false;
  ErrorCode failure = ErrorCode::Divergence;
  std::string message;
};

struct MethodSummary {
  std::string method;
  RunningMoments mse;
  RunningMoments psnr;
  RunningMoments nfe;
  RunningMoments wall_ms;
  int failures = 0;
};

struct MetricsReport {
  std::vector<TrialRecord> rows;  // method-major, then trial
  std::vector<MethodSummary> summary;

  /// Rows for one method, in trial order.
  std::vector<const TrialRecord*> method_rows(std::string_view method) const;
  int failures() const;
  bool diverged() const;
};

/// Invert z0 to z_{t_N} with every configured method, denoise back with DDIM
/// and compare against z0. Methods see identical instances and errors per
/// trial. Failed trials are tallied, not rethrown.
MetricsReport run_roundtrip(const ExperimentConfig& config);

struct BenchRow {
  std::string method;
  int extra_iters = 0;
  double nfe_per_step = 0.0;
  double nfe = 0.0;
  std::optional<long> expected_nfe;  // where the method fixes its call count
  bool ledger_ok = true;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double psnr_mean = 0.0;
  double wall_ms_mean = 0.0;
  std::int64_t trials = 0;
  int failures = 0;
};

struct BenchTable {
  std::vector<BenchRow> rows;
  MetricsReport trials;
};

/// IFE against fixed-point inversion with 0..max_extra extra iterations (no
/// early stop), plus naive DDIM.
std::vector<std::string> default_bench_methods(int max_extra = 4);

BenchTable run_bench(const ExperimentConfig& config);

ErrorStatsConfig stats_config(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Output

/// Header method,seed,dim,steps,nfe,mse,psnr,wall_ms; one row per
/// (method, trial). Method labels are quoted (they may contain commas);
/// failed trials carry nan metrics.
std::string metrics_csv(const MetricsReport& report);
void emit_csv(const MetricsReport& report, const std::string& path);
std::string bench_csv(const BenchTable& table);

/// Inversion trajectory of trial 0 for every method, one JSON object per grid
/// position tagged with "method".
std::string trajectories_jsonl(const ExperimentConfig& config);

/// <prefix>_<estimator>_{mean,variance,mse,coordinate}.csv
void write_histograms(const StatsReport& report, const std::string& prefix);

void write_text_file(const std::string& path, std::string_view content);

}  // namespace invlab
