#pragma once

#include <limits>
#include <string>
#include <string_view>

#include "invlab/dynamics.hpp"

namespace invlab {

/// Which timestep the naive DDIM inversion feeds to the predictor.
enum class EpsTimeMode {
  PrevTime,  // eps(z_{t_{i-1}}, t_{i-1})
  NextTime,  // eps(z_{t_{i-1}}, t_i)
};

enum class MethodKind { DdimNaive, FixedPoint, Ife, IfeNoErrorApprox, IfeNoInit, Oracle };

/// Inversion strategy selector, parsed from strings such as
/// "ddim", "ddim:next", "fp:k=3,tol=1e-6", "ife", "ife-noerr", "ife-noinit",
/// "oracle" and "oracle:tol=1e-12,max=1000".
struct InversionMethod {
  MethodKind kind = MethodKind::Ife;
  int extra_iters = 0;
  // Fixed point: early-stop threshold on the sup-norm step, 0 runs every
  // iteration. Oracle: residual target, must be > 0.
  double tol = 1e-6;
  int max_iters = 1000;
  EpsTimeMode eps_time = EpsTimeMode::PrevTime;

  static InversionMethod parse(std::string_view text);
  static InversionMethod fixed_point(int extra_iters, double tol = 1e-6);
  static InversionMethod oracle(double tol = 1e-12, int max_iters = 1000);

  void validate() const;
  /// Canonical string; parse(label()) == *this.
  std::string label() const;

  bool operator==(const InversionMethod&) const = default;
};

struct StepResult {
  Latent z;
  Latent eps;        // predictor output used for the update
  Latent data_pred;  // data prediction implied by eps at its evaluation point
  int evaluations = 0;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

struct PredictionError {
  Latent e;
  int step_index;
};

/// z_i = signal_ratio z_{i-1} + noise_gain eps.
template <typename D0, typename D1, typename Scalar>
LatentT<Scalar> inversion_update(const Eigen::MatrixBase<D0>& z_prev, const Eigen::MatrixBase<D1>& eps,
                                 const StepCoefficients<Scalar>& c) {
  require_same_shape(z_prev, eps);
  return c.signal_ratio * z_prev + c.noise_gain * eps;
}

/// The fixed point of step i written without the predictor:
/// z_i = noise_ratio z_{i-1} + eta sqrt(abar_i) (z0 + e).
template <typename D0, typename D1, typename D2, typename Scalar>
LatentT<Scalar> explicit_fixed_point(const StepCoefficients<Scalar>& c, const Eigen::MatrixBase<D0>& z_prev,
                                     const Eigen::MatrixBase<D1>& z0, const Eigen::MatrixBase<D2>& e) {
  require_same_shape(z_prev, z0);
  require_same_shape(z0, e);
  return c.noise_ratio * z_prev + (c.eta * c.sqrt_alpha_bar) * (z0 + e);
}

StepResult naive_ddim_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                                  int i, const Latent& z_prev, EpsTimeMode mode = EpsTimeMode::PrevTime);

/// Iterates g(z) = signal_ratio z_{i-1} + noise_gain eps(z, t_i) from
/// z^(0) = z_{i-1}, at most 1 + extra_iters times; stops early once the
/// sup-norm change drops below tol (tol == 0 never stops early).
StepResult fixed_point_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                                   int i, const Latent& z_prev, int extra_iters, double tol = 1e-6);

/// Iterates g to ||g(z) - z||_inf <= tol. Throws NoConvergence after
/// max_iters and Divergence on a non-finite iterate.
StepResult oracle_fixed_point(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                              const Latent& z_prev, double tol = 1e-12, int max_iters = 1000);

/// First-step estimate with the data-prediction error neglected.
Latent initial_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, const Latent& z0);

/// e_{i-1} recovered from the two previous latents by inverting the explicit
/// fixed-point form of step i-1. Requires i >= 2.
PredictionError extract_prev_error(const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                                   const Latent& z_prev2, const Latent& z_prev, const Latent& z0);

/// Explicit fixed-point form of step i with e_i replaced by e_{i-1}.
Latent ife_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                    const Latent& z0, const PredictionError& e_prev);

/// ife_estimate with the error term dropped.
Latent no_approx_estimate(const NoiseSchedule& schedule, const TimestepGrid& grid, int i, const Latent& z_prev,
                          const Latent& z0);

/// One predictor call at (z_hat, t_i) followed by the DDIM inversion update.
StepResult ife_invert_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                           const Latent& z_hat, const Latent& z_prev);

struct IfeOptions {
  bool error_approximation = true;
  bool initial_estimation = true;
};

/// Iteration-free inversion: estimate the fixed point, then spend a single
/// predictor call per step. NFE = N.
Trajectory ife_invert(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                      const Latent& z0, IfeOptions options = {});

Trajectory invert(const InversionMethod& method, NoisePredictor& predictor, const NoiseSchedule& schedule,
                  const TimestepGrid& grid, const Latent& z0);

}  // namespace invlab
