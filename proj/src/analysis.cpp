#include "invlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "invlab/parallel.hpp"

namespace invlab {

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::DdimPrev: return "ddim-prev";
    case EstimatorKind::Ife: return "ife";
    case EstimatorKind::NoApprox: return "no-approx";
  }
  return "unknown";
}

EstimatorKind estimator_from_string(std::string_view name) {
  if (name == "ddim-prev") return EstimatorKind::DdimPrev;
  if (name == "ife") return EstimatorKind::Ife;
  if (name == "no-approx") return EstimatorKind::NoApprox;
  throw Error(ErrorCode::InvalidParams, "unknown estimator '" + std::string(name) + "'");
}

Latent estimation_error(const Latent& z_true, const Latent& z_est) {
  require_same_shape(z_true, z_est);
  return z_true - z_est;
}

Latent ddim_bias_mean(double alpha_bar_prev, double alpha_bar, const Latent& z_prev, const Latent& z0) {
  require_same_shape(z_prev, z0);
  // No division by eta here, so an equal pair is fine and gives zero bias.
  const double r = std::sqrt(1.0 - alpha_bar) / std::sqrt(1.0 - alpha_bar_prev);
  const double s = std::sqrt(alpha_bar);
  const double eta = 1.0 - (std::sqrt(alpha_bar_prev) / s) * r;
  return (r - 1.0) * z_prev + (eta * s) * z0;
}

Latent ddim_bias_mean(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                      const Latent& z0) {
  if (i < 1 || i > grid.steps()) throw Error(ErrorCode::OutOfRange, "step " + std::to_string(i));
  return ddim_bias_mean(schedule.alpha_bar(grid[i - 1]), schedule.alpha_bar(grid[i]), z_prev, z0);
}

double theory_variance(EstimatorKind estimator, double eta, double alpha_bar, double gamma_i, double gamma_prev,
                       double rho) {
  const double scale = eta * eta * alpha_bar;
  switch (estimator) {
    case EstimatorKind::Ife:
      return scale * (gamma_i + gamma_prev - 2.0 * rho * std::sqrt(gamma_i * gamma_prev));
    case EstimatorKind::NoApprox:
      return scale * gamma_i;
    case EstimatorKind::DdimPrev:
      break;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------

std::size_t Histogram::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

Histogram histogram(std::span<const double> samples, int bins, std::optional<std::pair<double, double>> range) {
  if (bins < 1) throw Error(ErrorCode::InvalidParams, "histogram needs at least one bin");
  if (samples.empty()) throw Error(ErrorCode::EmptySamples, "histogram of no samples");
  Histogram h;
  if (range) {
    h.lo = range->first;
    h.hi = range->second;
    if (!(h.hi > h.lo)) throw Error(ErrorCode::InvalidParams, "histogram range must be increasing");
  } else {
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    h.lo = *mn;
    h.hi = *mx;
    if (!(h.hi > h.lo)) {
      // Point mass: centre it in a unit-width range.
      h.lo -= 0.5;
      h.hi += 0.5;
    }
  }
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double scale = bins / (h.hi - h.lo);
  for (double x : samples) {
    const double pos = std::floor((x - h.lo) * scale);
    const int k = pos < 0.0 ? 0 : pos >= bins ? bins - 1 : static_cast<int>(pos);
    ++h.counts[static_cast<std::size_t>(k)];
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream out;
  out << "bin_left,bin_right,count\n";
  char buf[96];
  for (int k = 0; k < h.bins(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", h.bin_left(k), h.bin_right(k), h.counts[static_cast<std::size_t>(k)]);
    out << buf;
  }
  return out.str();
}

void RunningMoments::add(double x) {
  ++n;
  const double delta = x - mean;
  mean += delta / static_cast<double>(n);
  m2 += delta * (x - mean);
}

void RunningMoments::merge(const RunningMoments& o) {
  if (o.n == 0) return;
  if (n == 0) {
    *this = o;
    return;
  }
  const double total = static_cast<double>(n + o.n);
  const double delta = o.mean - mean;
  mean += delta * static_cast<double>(o.n) / total;
  m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) / total;
  n += o.n;
}

// ---------------------------------------------------------------------------

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("INVLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void ErrorStatsConfig::validate() const {
  if (trials < 2) throw Error(ErrorCode::ConfigError, "stats need at least 2 trials");
  if (dim < 1) throw Error(ErrorCode::ConfigError, "dim must be >= 1");
  if (bins < 1) throw Error(ErrorCode::ConfigError, "bins must be >= 1");
  if (estimators.empty()) throw Error(ErrorCode::ConfigError, "no estimators requested");
  error.validate();
  if (error.gamma.size() > 1 && static_cast<int>(error.gamma.size()) < steps + 1) {
    throw Error(ErrorCode::ConfigError, "per-step gamma needs N + 1 entries");
  }
}

const EstimatorStats& StatsReport::at(EstimatorKind kind) const {
  for (const auto& e : estimators) {
    if (e.estimator == kind) return e;
  }
  throw Error(ErrorCode::OutOfRange, "estimator not in report: " + std::string(to_string(kind)));
}

namespace {

constexpr std::int64_t kChunk = 256;

// Accumulators for one estimator over one chunk of trials.
struct Partial {
  std::vector<std::vector<RunningMoments>> coord;  // [step][coordinate]
  std::vector<RunningMoments> step_avg;            // [coordinate]
  RunningMoments pooled;

  Partial(int steps, int dim)
      : coord(static_cast<std::size_t>(steps), std::vector<RunningMoments>(static_cast<std::size_t>(dim))),
        step_avg(static_cast<std::size_t>(dim)) {}

  void merge(const Partial& o) {
    for (std::size_t s = 0; s < coord.size(); ++s) {
      for (std::size_t c = 0; c < coord[s].size(); ++c) coord[s][c].merge(o.coord[s][c]);
    }
    for (std::size_t c = 0; c < step_avg.size(); ++c) step_avg[c].merge(o.step_avg[c]);
    pooled.merge(o.pooled);
  }
};

Latent estimate(EstimatorKind kind, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                const std::vector<Latent>& z_true, const Latent& z0) {
  const auto& z_prev = z_true[static_cast<std::size_t>(i - 1)];
  switch (kind) {
    case EstimatorKind::DdimPrev:
      return z_prev;
    case EstimatorKind::NoApprox:
      return no_approx_estimate(schedule, grid, i, z_prev, z0);
    case EstimatorKind::Ife:
      if (i == 1) return initial_estimate(schedule, grid, z0);
      return ife_estimate(schedule, grid, i, z_prev, z0,
                          extract_prev_error(schedule, grid, i, z_true[static_cast<std::size_t>(i - 2)], z_prev, z0));
  }
  throw Error(ErrorCode::InvalidParams, "estimator");
}

}  // namespace

StatsReport run_error_stats(const ErrorStatsConfig& config) {
  config.validate();
  const auto& schedule = config.schedule;
  const TimestepGrid grid = make_grid(schedule, config.steps, config.offset);
  const int n_steps = grid.steps();
  const int dim = config.dim;
  const auto n_est = config.estimators.size();
  const auto trials = config.trials;

  Rng z0_rng(stream_seed(config.seed, 0x7a30ULL));
  const Latent z0 = standard_normal(z0_rng, dim);

  std::vector<StepCoefficients<double>> coeffs;
  for (int i = 1; i <= n_steps; ++i) coeffs.push_back(step_coefficients(schedule, grid, i));

  // Per-sample summaries, stored by (trial, step) so histogram inputs do not
  // depend on scheduling.
  const auto per_est = static_cast<std::size_t>(trials) * static_cast<std::size_t>(n_steps);
  std::vector<std::vector<double>> sample_mean(n_est, std::vector<double>(per_est));
  std::vector<std::vector<double>> sample_var(n_est, std::vector<double>(per_est));
  std::vector<std::vector<double>> sample_mse(n_est, std::vector<double>(per_est));
  std::vector<std::vector<double>> coord_values(n_est, std::vector<double>(per_est * static_cast<std::size_t>(dim)));

  const std::int64_t chunks = (trials + kChunk - 1) / kChunk;
  std::vector<std::vector<Partial>> partials(static_cast<std::size_t>(chunks));

  parallel_for(chunks, resolve_threads(config.threads), [&](std::int64_t chunk) {
    auto& local = partials[static_cast<std::size_t>(chunk)];
    local.assign(n_est, Partial(n_steps, dim));
    std::vector<Latent> z_true(static_cast<std::size_t>(n_steps) + 1);
    std::vector<Latent> step_sum(n_est);
    const std::int64_t end = std::min(trials, (chunk + 1) * kChunk);
    for (std::int64_t trial = chunk * kChunk; trial < end; ++trial) {
      ErrorChain chain(config.error, static_cast<std::uint64_t>(trial), dim);
      z_true[0] = z0;
      for (int i = 1; i <= n_steps; ++i) {
        z_true[static_cast<std::size_t>(i)] =
            explicit_fixed_point(coeffs[static_cast<std::size_t>(i - 1)], z_true[static_cast<std::size_t>(i - 1)], z0,
                                 chain.at(i));
      }
      for (std::size_t k = 0; k < n_est; ++k) {
        step_sum[k] = Latent::Zero(dim);
        for (int i = 1; i <= n_steps; ++i) {
          const Latent delta = estimation_error(
              z_true[static_cast<std::size_t>(i)], estimate(config.estimators[k], schedule, grid, i, z_true, z0));
          step_sum[k] += delta;
          auto& per_coord = local[k].coord[static_cast<std::size_t>(i - 1)];
          for (int c = 0; c < dim; ++c) {
            per_coord[static_cast<std::size_t>(c)].add(delta[c]);
            local[k].pooled.add(delta[c]);
          }
          const auto idx = static_cast<std::size_t>(trial) * static_cast<std::size_t>(n_steps) +
                           static_cast<std::size_t>(i - 1);
          const double m = delta.mean();
          sample_mean[k][idx] = m;
          sample_var[k][idx] = dim > 1 ? (delta.array() - m).square().sum() / (dim - 1) : 0.0;
          sample_mse[k][idx] = delta.squaredNorm() / dim;
          std::copy(delta.data(), delta.data() + dim, coord_values[k].begin() + static_cast<std::ptrdiff_t>(idx * dim));
        }
        for (int c = 0; c < dim; ++c) local[k].step_avg[static_cast<std::size_t>(c)].add(step_sum[k][c] / n_steps);
      }
    }
  });

  // Merge in chunk order so results do not depend on the thread count.
  std::vector<Partial> total(n_est, Partial(n_steps, dim));
  for (const auto& chunk : partials) {
    for (std::size_t k = 0; k < n_est; ++k) total[k].merge(chunk[k]);
  }

  // Error-free path: the mean of z_true, which is linear in the errors.
  std::vector<Latent> z_mean(static_cast<std::size_t>(n_steps) + 1);
  z_mean[0] = z0;
  for (int i = 1; i <= n_steps; ++i) {
    z_mean[static_cast<std::size_t>(i)] = explicit_fixed_point(coeffs[static_cast<std::size_t>(i - 1)],
                                                               z_mean[static_cast<std::size_t>(i - 1)], z0,
                                                               Latent::Zero(dim));
  }

  StatsReport report;
  report.trials = trials;
  report.dim = dim;
  report.steps = n_steps;
  report.rho = config.error.rho;
  report.gamma = config.error.gamma;
  report.z0 = z0;
  for (std::size_t k = 0; k < n_est; ++k) {
    const EstimatorKind kind = config.estimators[k];
    EstimatorStats es;
    es.estimator = kind;
    for (int i = 1; i <= n_steps; ++i) {
      const auto& c = coeffs[static_cast<std::size_t>(i - 1)];
      const auto& per_coord = total[k].coord[static_cast<std::size_t>(i - 1)];
      StepStats st;
      st.step = i;
      st.mean.resize(dim);
      st.variance.resize(dim);
      double m2 = 0.0;
      double ms = 0.0;
      for (int d = 0; d < dim; ++d) {
        const auto& mom = per_coord[static_cast<std::size_t>(d)];
        st.mean[d] = mom.mean;
        st.variance[d] = mom.variance();
        m2 += mom.m2;
        ms += mom.mean_square();
      }
      st.pooled_variance = m2 / (static_cast<double>(dim) * static_cast<double>(trials - 1));
      st.mean_square = ms / dim;
      const double g_i = config.error.gamma_at(i);
      const double abar = c.sqrt_alpha_bar * c.sqrt_alpha_bar;
      if (kind == EstimatorKind::DdimPrev) {
        st.theory_mean = ddim_bias_mean(schedule, grid, i, z_mean[static_cast<std::size_t>(i - 1)], z0);
      } else {
        st.theory_mean = Latent::Zero(dim);
        // Step 1 uses the initial estimate, which carries no error term.
        const EstimatorKind effective = (kind == EstimatorKind::Ife && i == 1) ? EstimatorKind::NoApprox : kind;
        st.theory_variance =
            theory_variance(effective, c.eta, abar, g_i, config.error.gamma_at(i - 1), config.error.rho);
      }
      es.steps.push_back(std::move(st));
    }
    es.step_averaged_mean.resize(dim);
    es.step_averaged_variance.resize(dim);
    for (int d = 0; d < dim; ++d) {
      es.step_averaged_mean[d] = total[k].step_avg[static_cast<std::size_t>(d)].mean;
      es.step_averaged_variance[d] = total[k].step_avg[static_cast<std::size_t>(d)].variance();
    }
    es.pooled_mean = total[k].pooled.mean;
    es.pooled_variance = total[k].pooled.variance();
    es.sample_mean_hist = histogram(sample_mean[k], config.bins);
    es.sample_variance_hist = histogram(sample_var[k], config.bins);
    es.sample_mse_hist = histogram(sample_mse[k], config.bins);
    es.coordinate_hist = histogram(coord_values[k], config.bins);
    report.estimators.push_back(std::move(es));
  }
  return report;
}

namespace {

nlohmann::json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json hist_json(const Histogram& h) {
  return {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
}

nlohmann::json maybe(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string stats_to_json(const StatsReport& report) {
  nlohmann::json j;
  j["trials"] = report.trials;
  j["dim"] = report.dim;
  j["steps"] = report.steps;
  j["rho"] = report.rho;
  j["gamma"] = report.gamma;
  j["z0"] = vec(report.z0);
  auto ests = nlohmann::json::array();
  for (const auto& es : report.estimators) {
    nlohmann::json e;
    e["estimator"] = to_string(es.estimator);
    nlohmann::json mean = nlohmann::json::array(), variance = nlohmann::json::array(),
                   pooled = nlohmann::json::array(), mse = nlohmann::json::array(),
                   theory_var = nlohmann::json::array(), theory_mean = nlohmann::json::array();
    for (const auto& st : es.steps) {
      mean.push_back(vec(st.mean));
      variance.push_back(vec(st.variance));
      pooled.push_back(st.pooled_variance);
      mse.push_back(st.mean_square);
      theory_var.push_back(maybe(st.theory_variance));
      theory_mean.push_back(vec(st.theory_mean));
    }
    e["per_step"] = {{"mean", mean},
                     {"variance", variance},
                     {"pooled_variance", pooled},
                     {"mean_square", mse},
                     {"theory_variance", theory_var},
                     {"theory_mean", theory_mean}};
    e["pooled"] = {{"mean", es.pooled_mean}, {"variance", es.pooled_variance}};
    e["step_averaged"] = {{"mean", vec(es.step_averaged_mean)}, {"variance", vec(es.step_averaged_variance)}};
    e["histograms"] = {{"sample_mean", hist_json(es.sample_mean_hist)},
                       {"sample_variance", hist_json(es.sample_variance_hist)},
                       {"sample_mse", hist_json(es.sample_mse_hist)},
                       {"coordinate", hist_json(es.coordinate_hist)}};
    ests.push_back(std::move(e));
  }
  j["estimators"] = std::move(ests);
  return j.dump();
}

}  // namespace invlab
