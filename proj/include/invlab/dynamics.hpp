#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "invlab/conversions.hpp"
#include "invlab/models.hpp"
#include "invlab/schedule.hpp"

namespace invlab {

enum class Direction { Inversion, Denoising };

struct StepDiagnostics {
  int evaluations = 0;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

/// Latents z_{t_0}..z_{t_N} indexed by grid position regardless of
/// direction. Step i (1..N) moves between positions i-1 and i; eps[i-1] and
/// data_pred[i-1] are the predictor output used by that step and the data
/// prediction implied by it.
struct Trajectory {
  TimestepGrid grid;
  Direction direction;
  std::vector<Latent> latents;
  std::vector<Latent> eps;
  std::vector<Latent> data_pred;
  std::vector<StepDiagnostics> diagnostics;
  long nfe = 0;

  Trajectory(TimestepGrid g, Direction d);

  int steps() const { return grid.steps(); }
  /// z_{t_N} for an inversion, z_{t_0} for a denoising run.
  const Latent& terminal() const;
};

/// One JSON object per grid position: {i, t_i, z, eps, data_pred}. Position
/// 0 of an inversion (and N of a denoising run) has null eps/data_pred.
void write_trajectory_jsonl(const Trajectory& trajectory, std::ostream& out);

/// z_{i-1} = sqrt(abar_prev) x0(z_i, eps) + sqrt(1 - abar_prev) eps.
template <typename D0, typename D1>
LatentT<typename D0::Scalar> ddim_denoise_update(const Eigen::MatrixBase<D0>& z, const Eigen::MatrixBase<D1>& eps,
                                                 typename D0::Scalar alpha_bar, typename D0::Scalar alpha_bar_prev) {
  using std::sqrt;
  return sqrt(alpha_bar_prev) * data_prediction(z, eps, alpha_bar) + sqrt(1 - alpha_bar_prev) * eps;
}

struct DenoiseStep {
  Latent z;
  Latent eps;
  Latent data_pred;
};

/// One predictor call at (z_{t_i}, t_i), then the DDIM update to t_{i-1}.
DenoiseStep ddim_denoise_step_detailed(NoisePredictor& predictor, const NoiseSchedule& schedule,
                                       const TimestepGrid& grid, int i, const Latent& z);
Latent ddim_denoise_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                         const Latent& z);

/// Runs steps N..1 from z_{t_N}; NFE grows by exactly N.
Trajectory ddim_denoise(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                        const Latent& z_final);

}  // namespace invlab
