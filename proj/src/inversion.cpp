#include "invlab/inversion.hpp"

#include <charconv>
#include <cstdio>
#include <string>

namespace invlab {

namespace {

void check_step(const TimestepGrid& grid, int i) {
  if (i < 1 || i > grid.steps()) {
    throw Error(ErrorCode::OutOfRange, "inversion step " + std::to_string(i) + " outside [1, " +
                                           std::to_string(grid.steps()) + "]");
  }
}

// Signal/noise coefficients only; eta is not needed for the DDIM update.
StepCoefficients<double> raw_coefficients(const NoiseSchedule& schedule, const TimestepGrid& grid, int i) {
  check_step(grid, i);
  return coefficients_between(schedule.alpha_bar(grid[i - 1]), schedule.alpha_bar(grid[i]));
}

double sup_norm(const Latent& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int precision = 1; precision < 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Method selection

InversionMethod InversionMethod::fixed_point(int extra_iters, double tol) {
  InversionMethod m;
  m.kind = MethodKind::FixedPoint;
  m.extra_iters = extra_iters;
  m.tol = tol;
  return m;
}

InversionMethod InversionMethod::oracle(double tol, int max_iters) {
  InversionMethod m;
  m.kind = MethodKind::Oracle;
  m.tol = tol;
  m.max_iters = max_iters;
  return m;
}

void InversionMethod::validate() const {
  if (extra_iters < 0) throw Error(ErrorCode::InvalidParams, "extra_iters must be >= 0");
  if (kind == MethodKind::FixedPoint && !(tol >= 0.0)) throw Error(ErrorCode::InvalidParams, "fixed-point tol must be >= 0");
  if (kind == MethodKind::Oracle && !(tol > 0.0)) throw Error(ErrorCode::InvalidParams, "oracle tol must be > 0");
  if (kind == MethodKind::Oracle && max_iters < 1) throw Error(ErrorCode::InvalidParams, "oracle max_iters must be >= 1");
}

InversionMethod InversionMethod::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view args = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);

  InversionMethod m;
  if (name == "ddim") {
    m.kind = MethodKind::DdimNaive;
  } else if (name == "fp") {
    m = fixed_point(0);
  } else if (name == "ife") {
    m.kind = MethodKind::Ife;
  } else if (name == "ife-noerr") {
    m.kind = MethodKind::IfeNoErrorApprox;
  } else if (name == "ife-noinit") {
    m.kind = MethodKind::IfeNoInit;
  } else if (name == "oracle") {
    m = oracle();
  } else {
    throw Error(ErrorCode::UnknownMethod, "'" + std::string(text) + "'");
  }

  std::string_view rest = args;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    const std::string key(item.substr(0, eq));
    const std::string value = eq == std::string_view::npos ? std::string{} : std::string(item.substr(eq + 1));
    try {
      if (m.kind == MethodKind::DdimNaive && eq == std::string_view::npos && (key == "next" || key == "prev")) {
        m.eps_time = key == "next" ? EpsTimeMode::NextTime : EpsTimeMode::PrevTime;
      } else if (m.kind == MethodKind::FixedPoint && key == "k") {
        std::size_t used = 0;
        m.extra_iters = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } else if ((m.kind == MethodKind::FixedPoint || m.kind == MethodKind::Oracle) && key == "tol") {
        std::size_t used = 0;
        m.tol = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } else if (m.kind == MethodKind::Oracle && key == "max") {
        std::size_t used = 0;
        m.max_iters = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } else {
        throw Error(ErrorCode::UnknownMethod, "unexpected option '" + std::string(item) + "' in '" + std::string(text) + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::UnknownMethod, "bad value in '" + std::string(text) + "'");
    }
  }
  m.validate();
  return m;
}

std::string InversionMethod::label() const {
  switch (kind) {
    case MethodKind::DdimNaive:
      return eps_time == EpsTimeMode::PrevTime ? "ddim" : "ddim:next";
    case MethodKind::FixedPoint: {
      std::string s = "fp:k=" + std::to_string(extra_iters);
      if (tol != 1e-6) s += ",tol=" + format_double(tol);
      return s;
    }
    case MethodKind::Ife: return "ife";
    case MethodKind::IfeNoErrorApprox: return "ife-noerr";
    case MethodKind::IfeNoInit: return "ife-noinit";
    case MethodKind::Oracle: {
      std::string s = "oracle";
      const bool custom_tol = tol != 1e-12;
      const bool custom_max = max_iters != 1000;
      if (custom_tol || custom_max) s += ":";
      if (custom_tol) s += "tol=" + format_double(tol);
      if (custom_max) s += std::string(custom_tol ? "," : "") + "max=" + std::to_string(max_iters);
      return s;
    }
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Baselines

StepResult naive_ddim_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                                  int i, const Latent& z_prev, EpsTimeMode mode) {
  const auto c = raw_coefficients(schedule, grid, i);
  const int t_eval = mode == EpsTimeMode::PrevTime ? grid[i - 1] : grid[i];
  StepResult out;
  out.eps = predictor(z_prev, t_eval);
  out.data_pred = data_prediction(z_prev, out.eps, schedule.alpha_bar(t_eval));
  out.z = inversion_update(z_prev, out.eps, c);
  out.evaluations = 1;
  require_finite(out.z, "inverted latent");
  return out;
}

StepResult fixed_point_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                                   int i, const Latent& z_prev, int extra_iters, double tol) {
  if (extra_iters < 0) throw Error(ErrorCode::InvalidParams, "extra_iters must be >= 0");
  if (!(tol >= 0.0)) throw Error(ErrorCode::InvalidParams, "tol must be >= 0");
  const auto c = raw_coefficients(schedule, grid, i);
  const double abar = schedule.alpha_bar(grid[i]);

  StepResult out;
  out.z = z_prev;
  for (int n = 0; n <= extra_iters; ++n) {
    Latent eps = predictor(out.z, grid[i]);
    Latent next = inversion_update(z_prev, eps, c);
    ++out.evaluations;
    if (!next.allFinite()) {
      throw Error(ErrorCode::Divergence, "fixed-point iterate became non-finite at step " + std::to_string(i));
    }
    out.data_pred = data_prediction(out.z, eps, abar);
    out.eps = std::move(eps);
    out.residual = sup_norm(next - out.z);
    out.z = std::move(next);
    if (out.residual < tol) break;
  }
  return out;
}

StepResult oracle_fixed_point(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                              const Latent& z_prev, double tol, int max_iters) {
  if (!(tol > 0.0) || max_iters < 1) throw Error(ErrorCode::InvalidParams, "oracle needs tol > 0 and max_iters >= 1");
  const auto c = raw_coefficients(schedule, grid, i);
  const double abar = schedule.alpha_bar(grid[i]);

  StepResult out;
  out.z = z_prev;
  while (out.evaluations < max_iters) {
    Latent eps = predictor(out.z, grid[i]);
    Latent next = inversion_update(z_prev, eps, c);
    ++out.evaluations;
    if (!next.allFinite()) {
      throw Error(ErrorCode::Divergence, "oracle iterate became non-finite at step " + std::to_string(i));
    }
    out.data_pred = data_prediction(out.z, eps, abar);
    out.eps = std::move(eps);
    out.residual = sup_norm(next - out.z);
    out.z = std::move(next);
    if (out.residual <= tol) return out;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "oracle fixed point at step %d: residual %.3e after %d iterations", i, out.residual,
                max_iters);
  throw Error(ErrorCode::NoConvergence, buf);
}

// ---------------------------------------------------------------------------
// Iteration-free estimator

Latent initial_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, const Latent& z0) {
  const auto c = step_coefficients(schedule, grid, 1);
  return c.noise_ratio * z0 + (c.eta * c.sqrt_alpha_bar) * z0;
}

PredictionError extract_prev_error(const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                                   const Latent& z_prev2, const Latent& z_prev, const Latent& z0) {
  if (i < 2) throw Error(ErrorCode::OutOfRange, "error extraction needs i >= 2");
  check_step(grid, i);
  require_same_shape(z_prev2, z_prev);
  require_same_shape(z_prev, z0);
  const auto c = step_coefficients(schedule, grid, i - 1);
  return {(z_prev - c.noise_ratio * z_prev2) / (c.eta * c.sqrt_alpha_bar) - z0, i - 1};
}

Latent ife_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                    const Latent& z0, const PredictionError& e_prev) {
  check_step(grid, i);
  return explicit_fixed_point(step_coefficients(schedule, grid, i), z_prev, z0, e_prev.e);
}

Latent no_approx_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                          const Latent& z0) {
  return ife_estimate(schedule, grid, i, z_prev, z0, {Latent::Zero(z0.size()), i - 1});
}

StepResult ife_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                           const Latent& z_hat, const Latent& z_prev) {
  const auto c = raw_coefficients(schedule, grid, i);
  require_same_shape(z_hat, z_prev);
  StepResult out;
  out.eps = predictor(z_hat, grid[i]);
  out.data_pred = data_prediction(z_hat, out.eps, schedule.alpha_bar(grid[i]));
  out.z = inversion_update(z_prev, out.eps, c);
  out.evaluations = 1;
  out.residual = sup_norm(out.z - z_hat);
  require_finite(out.z, "inverted latent");
  return out;
}

namespace {

void record(Trajectory& traj, int i, StepResult&& step) {
  const auto k = static_cast<std::size_t>(i - 1);
  traj.latents[k + 1] = std::move(step.z);
  traj.eps[k] = std::move(step.eps);
  traj.data_pred[k] = std::move(step.data_pred);
  traj.diagnostics[k] = {step.evaluations, step.residual};
}

}  // namespace

Trajectory ife_invert(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                      const Latent& z0, IfeOptions options) {
  require_finite(z0, "z0");
  const long nfe_before = predictor.nfe();
  Trajectory traj(grid, Direction::Inversion);
  traj.latents[0] = z0;

  if (options.initial_estimation) {
    record(traj, 1, ife_invert_step(predictor, schedule, grid, 1, initial_estimate(schedule, grid, z0), z0));
  } else {
    record(traj, 1, naive_ddim_invert_step(predictor, schedule, grid, 1, z0, EpsTimeMode::PrevTime));
  }

  for (int i = 2; i <= grid.steps(); ++i) {
    const auto& z_prev = traj.latents[static_cast<std::size_t>(i - 1)];
    Latent z_hat;
    if (options.error_approximation) {
      const auto e_prev =
          extract_prev_error(schedule, grid, i, traj.latents[static_cast<std::size_t>(i - 2)], z_prev, z0);
      z_hat = ife_estimate(schedule, grid, i, z_prev, z0, e_prev);
    } else {
      z_hat = no_approx_estimate(schedule, grid, i, z_prev, z0);
    }
    record(traj, i, ife_invert_step(predictor, schedule, grid, i, z_hat, z_prev));
  }
  traj.nfe = predictor.nfe() - nfe_before;
  return traj;
}

Trajectory invert(const InversionMethod& method, NoisePredictor& predictor, const NoiseSchedule& schedule,
                  const TimestepGrid& grid, const Latent& z0) {
  method.validate();
  switch (method.kind) {
    case MethodKind::Ife: return ife_invert(predictor, schedule, grid, z0);
    case MethodKind::IfeNoErrorApprox: return ife_invert(predictor, schedule, grid, z0, {false, true});
    case MethodKind::IfeNoInit: return ife_invert(predictor, schedule, grid, z0, {true, false});
    case MethodKind::DdimNaive:
    case MethodKind::FixedPoint:
    case MethodKind::Oracle: break;
  }

  require_finite(z0, "z0");
  const long nfe_before = predictor.nfe();
  Trajectory traj(grid, Direction::Inversion);
  traj.latents[0] = z0;
  for (int i = 1; i <= grid.steps(); ++i) {
    const auto& z_prev = traj.latents[static_cast<std::size_t>(i - 1)];
    switch (method.kind) {
      case MethodKind::DdimNaive:
        record(traj, i, naive_ddim_invert_step(predictor, schedule, grid, i, z_prev, method.eps_time));
        break;
      case MethodKind::FixedPoint:
        record(traj, i, fixed_point_invert_step(predictor, schedule, grid, i, z_prev, method.extra_iters, method.tol));
        break;
      case MethodKind::Oracle:
        record(traj, i, oracle_fixed_point(predictor, schedule, grid, i, z_prev, method.tol, method.max_iters));
        break;
      default:
        throw Error(ErrorCode::UnknownMethod, method.label());
    }
  }
  traj.nfe = predictor.nfe() - nfe_before;
  return traj;
}

}  // namespace invlab
