#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "invlab/inversion.hpp"
#include "invlab/models.hpp"

namespace invlab {

enum class EstimatorKind {
  DdimPrev,  // the previous latent z_{i-1} used as the estimate
  Ife,       // explicit fixed point with e_i ~ e_{i-1}
  NoApprox,  // explicit fixed point with e_i dropped
};

std::string_view to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(std::string_view name);

/// Delta = z_true - z_est.
Latent estimation_error(const Latent& z_true, const Latent& z_est);

/// Mean of Delta(z_{i-1}) under zero-mean data-prediction errors:
/// (noise_ratio - 1) z_{i-1} + eta sqrt(abar_i) z0.
Latent ddim_bias_mean(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                      const Latent& z0);
Latent ddim_bias_mean(double alpha_bar_prev, double alpha_bar, const Latent& z_prev, const Latent& z0);

/// Per-coordinate variance of Delta for the unbiased estimators.
///   Ife:      eta^2 abar (gamma_i + gamma_prev - 2 rho sqrt(gamma_i gamma_prev))
///   NoApprox: eta^2 abar gamma_i
/// DdimPrev has no closed form here (its variance depends on the latent's own
/// spread) and returns NaN.
double theory_variance(EstimatorKind estimator, double eta, double alpha_bar, double gamma_i, double gamma_prev,
                       double rho);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  int bins() const { return static_cast<int>(counts.size()); }
  double width() const { return (hi - lo) / bins(); }
  double bin_left(int k) const { return lo + k * width(); }
  double bin_right(int k) const { return k + 1 == bins() ? hi : lo + (k + 1) * width(); }
  std::size_t total() const;
};

/// Equal-width bins over `range` (default: sample min..max). Samples outside
/// an explicit range are clamped into the edge bins so counts are conserved.
Histogram histogram(std::span<const double> samples, int bins, std::optional<std::pair<double, double>> range = {});

/// CSV with header bin_left,bin_right,count.
std::string histogram_csv(const Histogram& h);

/// Mergeable running mean/variance (Welford, Chan et al. combination).
struct RunningMoments {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x);
  void merge(const RunningMoments& other);
  /// Unbiased (n - 1) sample variance.
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  /// Mean square about zero.
  double mean_square() const { return n > 0 ? m2 / static_cast<double>(n) + mean * mean : 0.0; }
};

struct ErrorStatsConfig {
  NoiseSchedule schedule = default_schedule();
  int steps = 20;
  int offset = 1;
  int dim = 8;
  std::int64_t trials = 2000;
  ErrorModel error;  // error.seed seeds the per-trial error chains
  std::uint64_t seed = 0;  // seeds the clean sample z0 ~ N(0, I)
  std::vector<EstimatorKind> estimators{EstimatorKind::DdimPrev, EstimatorKind::Ife, EstimatorKind::NoApprox};
  int bins = 50;
  int threads = 0;  // 0: INVLAB_THREADS or hardware concurrency

  void validate() const;
};

struct StepStats {
  int step = 0;
  Eigen::VectorXd mean;      // per coordinate
  Eigen::VectorXd variance;  // per coordinate, unbiased
  double pooled_variance = 0.0;  // coordinates pooled around their own means
  double mean_square = 0.0;      // MSE about zero, all coordinates
  double theory_variance = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd theory_mean;  // DdimPrev: ddim_bias_mean on the error-free path; otherwise zero
};

struct EstimatorStats {
  EstimatorKind estimator;
  std::vector<StepStats> steps;  // index k = step k + 1
  // Per-trial average of Delta over steps, per coordinate. Trials are
  // independent, so these feed an exact z-test of a zero mean.
  Eigen::VectorXd step_averaged_mean;
  Eigen::VectorXd step_averaged_variance;
  // Pooled over steps.
  double pooled_mean = 0.0;
  double pooled_variance = 0.0;
  // Per-sample (one sample = one trial at one step, summarized over
  // coordinates) histograms, plus all per-coordinate values.
  Histogram sample_mean_hist;
  Histogram sample_variance_hist;  // unbiased, across coordinates
  Histogram sample_mse_hist;       // mean square about zero
  Histogram coordinate_hist;
};

struct StatsReport {
  std::int64_t trials = 0;
  int dim = 0;
  int steps = 0;
  double rho = 0.0;
  std::vector<double> gamma;
  Latent z0;
  std::vector<EstimatorStats> estimators;

  const EstimatorStats& at(EstimatorKind kind) const;
};

/// Monte Carlo study of the fixed-point estimators. Every trial draws an
/// error chain, builds the ground-truth latents with the explicit
/// fixed-point form, and records Delta for each estimator at each step.
StatsReport run_error_stats(const ErrorStatsConfig& config);

std::string stats_to_json(const StatsReport& report);

/// Worker count: explicit value if > 0, else INVLAB_THREADS, else hardware.
int resolve_threads(int requested);

}  // namespace invlab
