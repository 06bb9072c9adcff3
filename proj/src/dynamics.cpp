#include "invlab/dynamics.hpp"

#include <ostream>

#include <json.hpp>

namespace invlab {

Trajectory::Trajectory(TimestepGrid g, Direction d) : grid(std::move(g)), direction(d) {
  const auto n = static_cast<std::size_t>(grid.steps());
  latents.resize(n + 1);
  eps.resize(n);
  data_pred.resize(n);
  diagnostics.resize(n);
}

const Latent& Trajectory::terminal() const {
  return direction == Direction::Inversion ? latents.back() : latents.front();
}

namespace {

nlohmann::json to_json_array(const Latent& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

void write_trajectory_jsonl(const Trajectory& trajectory, std::ostream& out) {
  const int n = trajectory.steps();
  for (int pos = 0; pos <= n; ++pos) {
    nlohmann::json rec;
    rec["i"] = pos;
    rec["t_i"] = trajectory.grid[pos];
    rec["z"] = to_json_array(trajectory.latents[static_cast<std::size_t>(pos)]);
    // Inversion step i lands on position i; denoising step i lands on i-1.
    const int step = trajectory.direction == Direction::Inversion ? pos : pos + 1;
    if (step >= 1 && step <= n) {
      rec["eps"] = to_json_array(trajectory.eps[static_cast<std::size_t>(step - 1)]);
      rec["data_pred"] = to_json_array(trajectory.data_pred[static_cast<std::size_t>(step - 1)]);
    } else {
      rec["eps"] = nullptr;
      rec["data_pred"] = nullptr;
    }
    out << rec.dump() << '\n';
  }
}

DenoiseStep ddim_denoise_step_detailed(NoisePredictor& predictor, const NoiseSchedule& schedule,
                                       const TimestepGrid& grid, int i, const Latent& z) {
  if (i < 1 || i > grid.steps()) throw Error(ErrorCode::OutOfRange, "denoise step " + std::to_string(i));
  const double abar = schedule.alpha_bar(grid[i]);
  const double abar_prev = schedule.alpha_bar(grid[i - 1]);
  DenoiseStep out;
  out.eps = predictor(z, grid[i]);
  out.data_pred = data_prediction(z, out.eps, abar);
  out.z = std::sqrt(abar_prev) * out.data_pred + std::sqrt(1.0 - abar_prev) * out.eps;
  require_finite(out.z, "denoised latent");
  return out;
}

Latent ddim_denoise_step(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid, int i,
                         const Latent& z) {
  return ddim_denoise_step_detailed(predictor, schedule, grid, i, z).z;
}

Trajectory ddim_denoise(NoisePredictor& predictor, const NoiseSchedule& schedule, const TimestepGrid& grid,
                        const Latent& z_final) {
  require_finite(z_final);
  const long nfe_before = predictor.nfe();
  Trajectory traj(grid, Direction::Denoising);
  const int n = grid.steps();
  traj.latents[static_cast<std::size_t>(n)] = z_final;
  for (int i = n; i >= 1; --i) {
    auto step = ddim_denoise_step_detailed(predictor, schedule, grid, i, traj.latents[static_cast<std::size_t>(i)]);
    const auto k = static_cast<std::size_t>(i - 1);
    traj.latents[k] = std::move(step.z);
    traj.eps[k] = std::move(step.eps);
    traj.data_pred[k] = std::move(step.data_pred);
    traj.diagnostics[k].evaluations = 1;
  }
  traj.nfe = predictor.nfe() - nfe_before;
  return traj;
}

}  // namespace invlab
