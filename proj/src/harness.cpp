#include "invlab/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "invlab/dynamics.hpp"
#include "invlab/parallel.hpp"
#include "invlab/rng.hpp"

namespace invlab {

double mse(const Latent& a, const Latent& b) {
  require_same_shape(a, b, "mse");
  if (a.size() == 0) throw Error(ErrorCode::ShapeMismatch, "mse of empty latents");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double psnr(const Latent& a, const Latent& b, double peak) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

std::vector<const TrialRecord*> MetricsReport::method_rows(std::string_view method) const {
  std::vector<const TrialRecord*> out;
  for (const auto& r : rows) {
    if (r.method == method) out.push_back(&r);
  }
  return out;
}

int MetricsReport::failures() const {
  int n = 0;
  for (const auto& s : summary) n += s.failures;
  return n;
}

bool MetricsReport::diverged() const {
  for (const auto& r : rows) {
    if (r.failed && (r.failure == ErrorCode::Divergence || r.failure == ErrorCode::NoConvergence ||
                     r.failure == ErrorCode::NonFinite)) {
      return true;
    }
  }
  return false;
}

namespace {

constexpr std::uint64_t kInstanceStream = 0x696e7374;

struct Instance {
  std::unique_ptr<NoisePredictor> predictor;
  Latent z0;
  double peak = 1.0;
  std::uint64_t seed = 0;
};

// Data model, clean sample and predictor for one trial. Every method sees the
// same instance for a given trial.
Instance make_instance(const ExperimentConfig& config, const std::shared_ptr<const NoiseSchedule>& schedule,
                       const TimestepGrid& grid, std::int64_t trial) {
  Instance inst;
  inst.seed = stream_seed(config.seed, static_cast<std::uint64_t>(trial), kInstanceStream);
  Rng rng(inst.seed);
  double variance = 1.0;
  switch (config.model.type) {
    case ModelType::Gaussian:
      variance = config.model.variance;
      inst.z0 = std::sqrt(variance) * standard_normal(rng, config.dim);
      inst.predictor = std::make_unique<GaussianPredictor>(schedule, variance);
      break;
    case ModelType::Gmm:
      variance = config.model.gmm.marginal_variance();
      inst.z0 = config.model.gmm.sample(rng);
      inst.predictor = std::make_unique<GmmPredictor>(schedule, config.model.gmm);
      break;
    case ModelType::GmmRandom: {
      auto gmm = random_gmm(rng, config.dim, config.model.components, config.model.mean_scale,
                            config.model.variance_min, config.model.variance_max);
      variance = gmm.marginal_variance();
      inst.z0 = gmm.sample(rng);
      inst.predictor = std::make_unique<GmmPredictor>(schedule, std::move(gmm));
      break;
    }
  }
  inst.peak = config.psnr_peak.value_or(6.0 * std::sqrt(variance));
  if (config.error && config.error->enabled()) {
    ErrorModel e = *config.error;
    e.seed = config.seed;
    inst.predictor = std::make_unique<PerturbedPredictor>(std::move(inst.predictor), e, grid,
                                                          static_cast<std::uint64_t>(trial));
  }
  return inst;
}

struct Run {
  Trajectory inversion;
  Trajectory denoised;
  double wall_ms;
};

Run run_one(const InversionMethod& method, NoisePredictor& predictor, const NoiseSchedule& schedule,
            const TimestepGrid& grid, const Latent& z0) {
  const auto start = std::chrono::steady_clock::now();
  Trajectory inv = invert(method, predictor, schedule, grid, z0);
  const auto stop = std::chrono::steady_clock::now();
  Trajectory den = ddim_denoise(predictor, schedule, grid, inv.terminal());
  if (predictor.nfe() != inv.nfe + den.nfe) throw std::logic_error("predictor call ledger out of sync");
  return {std::move(inv), std::move(den), std::chrono::duration<double, std::milli>(stop - start).count()};
}

}  // namespace

MetricsReport run_roundtrip(const ExperimentConfig& config) {
  config.validate();
  const auto methods = config.parsed_methods();
  auto schedule = std::make_shared<const NoiseSchedule>(config.make_schedule());
  const TimestepGrid grid = make_grid(*schedule, config.steps, config.offset);
  const auto n_methods = static_cast<std::int64_t>(methods.size());

  MetricsReport report;
  report.rows.resize(static_cast<std::size_t>(n_methods * config.trials));
  parallel_for(n_methods * config.trials, resolve_threads(config.threads), [&](std::int64_t k) {
    const auto m = static_cast<std::size_t>(k / config.trials);
    const std::int64_t trial = k % config.trials;
    Instance inst = make_instance(config, schedule, grid, trial);

    TrialRecord& row = report.rows[static_cast<std::size_t>(k)];
    row.method = config.methods[m];
    row.trial = trial;
    row.seed = inst.seed;
    row.dim = config.dim;
    row.steps = config.steps;
    try {
      Run run = run_one(methods[m], *inst.predictor, *schedule, grid, inst.z0);
      row.nfe = run.inversion.nfe;
      row.wall_ms = run.wall_ms;
      const Latent& recon = run.denoised.latents.front();
      row.mse = mse(inst.z0, recon);
      row.psnr = psnr(inst.z0, recon, inst.peak);
      row.deviation.reserve(run.inversion.latents.size());
      for (std::size_t i = 0; i < run.inversion.latents.size(); ++i) {
        row.deviation.push_back(std::sqrt(mse(run.inversion.latents[i], run.denoised.latents[i])));
      }
    } catch (const Error& e) {
      row.failed = true;
      row.failure = e.code();
      row.message = e.what();
      row.nfe = inst.predictor->nfe();
      row.mse = row.psnr = std::numeric_limits<double>::quiet_NaN();
    }
  });

  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary s;
    s.method = config.methods[m];
    for (std::int64_t t = 0; t < config.trials; ++t) {
      const auto& r = report.rows[m * static_cast<std::size_t>(config.trials) + static_cast<std::size_t>(t)];
      if (r.failed) {
        ++s.failures;
        continue;
      }
      s.mse.add(r.mse);
      s.psnr.add(r.psnr);
      s.nfe.add(static_cast<double>(r.nfe));
      s.wall_ms.add(r.wall_ms);
    }
    report.summary.push_back(s);
  }
  return report;
}

std::vector<std::string> default_bench_methods(int max_extra) {
  std::vector<std::string> out{"ife", "ddim"};
  for (int k = 0; k <= max_extra; ++k) out.push_back(InversionMethod::fixed_point(k, 0.0).label());
  return out;
}

BenchTable run_bench(const ExperimentConfig& config) {
  if (config.methods.empty()) throw Error(ErrorCode::ConfigError, "bench needs at least one method");
  BenchTable table;
  table.trials = run_roundtrip(config);
  const auto methods = config.parsed_methods();
  const long n = config.steps;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const auto& method = methods[m];
    const auto& s = table.trials.summary[m];
    BenchRow row;
    row.method = config.methods[m];
    row.extra_iters = method.kind == MethodKind::FixedPoint ? method.extra_iters : 0;
    switch (method.kind) {
      case MethodKind::FixedPoint:
        if (method.tol == 0.0) row.expected_nfe = n * (1 + method.extra_iters);
        break;
      case MethodKind::Oracle: break;
      default: row.expected_nfe = n;
    }
    row.nfe = s.nfe.mean;
    row.nfe_per_step = s.nfe.mean / static_cast<double>(n);
    row.mse_mean = s.mse.mean;
    row.mse_std = std::sqrt(s.mse.variance());
    row.psnr_mean = s.psnr.mean;
    row.wall_ms_mean = s.wall_ms.mean;
    row.trials = config.trials;
    row.failures = s.failures;
    if (row.expected_nfe) {
      for (const auto* r : table.trials.method_rows(row.method)) {
        if (!r->failed && r->nfe != *row.expected_nfe) row.ledger_ok = false;
      }
    }
    table.rows.push_back(row);
  }
  return table;
}

ErrorStatsConfig stats_config(const ExperimentConfig& config) {
  ErrorStatsConfig s;
  s.schedule = config.make_schedule();
  s.steps = config.steps;
  s.offset = config.offset;
  s.dim = config.dim;
  s.trials = config.trials;
  s.error = config.error.value_or(ErrorModel{});
  s.error.seed = config.seed;
  s.seed = config.seed;
  s.bins = config.bins;
  s.threads = config.threads;
  return s;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "method,seed,dim,steps,nfe,mse,psnr,wall_ms\n";
  for (const auto& r : report.rows) {
    char wall[40];
    std::snprintf(wall, sizeof wall, "%.6f", r.wall_ms);
    out << '"' << r.method << "\"," << r.seed << ',' << r.dim << ',' << r.steps << ',' << r.nfe << ','
        << fmt(r.mse) << ',' << fmt(r.psnr) << ',' << wall << '\n';
  }
  return out.str();
}

void emit_csv(const MetricsReport& report, const std::string& path) { write_text_file(path, metrics_csv(report)); }

std::string bench_csv(const BenchTable& table) {
  std::ostringstream out;
  out << "method,extra_iters,nfe_per_step,nfe,expected_nfe,ledger_ok,trials,failures,mse_mean,mse_std,psnr_mean,"
         "wall_ms_mean\n";
  for (const auto& r : table.rows) {
    out << '"' << r.method << "\"," << r.extra_iters << ',' << fmt(r.nfe_per_step) << ',' << fmt(r.nfe) << ','
        << (r.expected_nfe ? std::to_string(*r.expected_nfe) : "") << ',' << (r.ledger_ok ? 1 : 0) << ','
        << r.trials << ',' << r.failures << ',' << fmt(r.mse_mean) << ',' << fmt(r.mse_std) << ','
        << fmt(r.psnr_mean) << ',' << fmt(r.wall_ms_mean) << '\n';
  }
  return out.str();
}

std::string trajectories_jsonl(const ExperimentConfig& config) {
  config.validate();
  auto schedule = std::make_shared<const NoiseSchedule>(config.make_schedule());
  const TimestepGrid grid = make_grid(*schedule, config.steps, config.offset);
  std::ostringstream out;
  const auto methods = config.parsed_methods();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    Instance inst = make_instance(config, schedule, grid, 0);
    Trajectory inv = invert(methods[m], *inst.predictor, *schedule, grid, inst.z0);
    std::ostringstream lines;
    write_trajectory_jsonl(inv, lines);
    std::istringstream in(lines.str());
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = nlohmann::ordered_json::parse(line);
      nlohmann::ordered_json rec;
      rec["method"] = config.methods[m];
      for (auto it = j.begin(); it != j.end(); ++it) rec[it.key()] = it.value();
      out << rec.dump() << '\n';
    }
  }
  return out.str();
}

void write_histograms(const StatsReport& report, const std::string& prefix) {
  for (const auto& e : report.estimators) {
    const std::string base = prefix + "_" + std::string(to_string(e.estimator)) + "_";
    write_text_file(base + "mean.csv", histogram_csv(e.sample_mean_hist));
    write_text_file(base + "variance.csv", histogram_csv(e.sample_variance_hist));
    write_text_file(base + "mse.csv", histogram_csv(e.sample_mse_hist));
    write_text_file(base + "coordinate.csv", histogram_csv(e.coordinate_hist));
  }
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

}  // namespace invlab
