#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "invlab/error.hpp"

namespace invlab {

enum class ScheduleKind { LinearBeta, ScaledLinearBeta, Cosine, Table };

std::string_view to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(std::string_view name);

struct ScheduleParams {
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
  double cosine_offset = 0.008;
  double max_beta = 0.999;

  bool operator==(const ScheduleParams&) const = default;
};

/// Discrete cumulative signal table alpha_bar[t], t = 0..T-1.
///
/// Immutable once built. Construction validates that every entry lies in
/// (0, 1] and that the table is strictly decreasing.
class NoiseSchedule {
 public:
  /// Wraps an explicit table (kind() == Table). Used for hand-built schedules
  /// and for deserialization of schedules whose generator is unknown.
  static NoiseSchedule from_table(Eigen::VectorXd alpha_bar);

  ScheduleKind kind() const { return kind_; }
  int steps() const { return static_cast<int>(alpha_bar_.size()); }
  const ScheduleParams& params() const { return params_; }
  const Eigen::VectorXd& alpha_bars() const { return alpha_bar_; }

  double alpha_bar(int t) const;

 private:
  friend NoiseSchedule build_schedule(ScheduleKind, int, const ScheduleParams&);
  friend NoiseSchedule schedule_from_json(std::string_view);
  NoiseSchedule(ScheduleKind kind, ScheduleParams params, Eigen::VectorXd alpha_bar);

  ScheduleKind kind_;
  ScheduleParams params_;
  Eigen::VectorXd alpha_bar_;
};

NoiseSchedule build_schedule(ScheduleKind kind, int steps, const ScheduleParams& params = {});

/// Scaled-linear beta schedule, T = 1000, beta in [8.5e-4, 1.2e-2].
NoiseSchedule default_schedule();

/// JSON {"kind", "T", "params", "alpha_bar"} with 17 significant digits.
std::string schedule_to_json(const NoiseSchedule& schedule);
NoiseSchedule schedule_from_json(std::string_view text);

/// Inversion timesteps t_0 < t_1 < ... < t_N over a schedule.
class TimestepGrid {
 public:
  /// Validates ordering, range, N >= 1 and alpha_bar[t_0] < 1.
  static TimestepGrid from_indices(const NoiseSchedule& schedule, std::vector<int> indices);

  int steps() const { return static_cast<int>(indices_.size()) - 1; }
  int operator[](int i) const { return indices_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& indices() const { return indices_; }

  /// Grid position of model timestep t, if t is on the grid.
  std::optional<int> position_of(int t) const;

  bool operator==(const TimestepGrid&) const = default;

 private:
  explicit TimestepGrid(std::vector<int> indices) : indices_(std::move(indices)) {}
  std::vector<int> indices_;
};

/// Uniform grid t_i = offset + i * floor((T - offset) / N), clipped to T - 1.
TimestepGrid make_grid(const NoiseSchedule& schedule, int steps, int offset = 1);

inline constexpr double kEtaSingularThreshold = 1e-12;

/// Coefficients of one inversion step t_{i-1} -> t_i.
///
///   z_i = signal_ratio * z_{i-1} + noise_gain * eps              (DDIM inversion)
///   z_i = noise_ratio * z_{i-1} + eta * sqrt_alpha_bar * x0      (explicit fixed point)
template <typename Scalar>
struct StepCoefficients {
  Scalar signal_ratio;    // sqrt(abar_i) / sqrt(abar_{i-1})
  Scalar noise_gain;      // sqrt(1 - abar_i) - signal_ratio * sqrt(1 - abar_{i-1})
  Scalar noise_ratio;     // sqrt(1 - abar_i) / sqrt(1 - abar_{i-1})
  Scalar eta;             // 1 - noise_ratio / signal_ratio
  Scalar sqrt_alpha_bar;  // sqrt(abar_i)
  Scalar sigma;           // sqrt(1 - abar_i)
  Scalar sigma_prev;      // sqrt(1 - abar_{i-1})
};

/// Raw coefficients for an arbitrary (abar_prev, abar_cur) pair. Does not
/// reject eta == 0, so equal-time degenerate steps are representable.
template <typename Scalar>
StepCoefficients<Scalar> coefficients_between(Scalar abar_prev, Scalar abar_cur) {
  using std::sqrt;
  if (!(abar_prev > Scalar(0) && abar_prev < Scalar(1)) || !(abar_cur > Scalar(0) && abar_cur <= Scalar(1))) {
    throw Error(ErrorCode::InvalidParams, "alpha_bar pair outside (0, 1) x (0, 1]");
  }
  StepCoefficients<Scalar> c;
  const Scalar sa_prev = sqrt(abar_prev);
  c.sqrt_alpha_bar = sqrt(abar_cur);
  c.sigma_prev = sqrt(Scalar(1) - abar_prev);
  c.sigma = sqrt(Scalar(1) - abar_cur);
  c.signal_ratio = c.sqrt_alpha_bar / sa_prev;
  c.noise_gain = c.sigma - c.signal_ratio * c.sigma_prev;
  c.noise_ratio = c.sigma / c.sigma_prev;
  c.eta = Scalar(1) - (sa_prev / c.sqrt_alpha_bar) * c.noise_ratio;
  return c;
}

template <typename Scalar>
const StepCoefficients<Scalar>& require_nonsingular(const StepCoefficients<Scalar>& c) {
  using std::abs;
  if (abs(c.eta) < Scalar(kEtaSingularThreshold)) {
    throw Error(ErrorCode::EtaSingular, "|eta| below 1e-12 (flat alpha_bar pair)");
  }
  return c;
}

/// Coefficients for grid step i (1 <= i <= N). Throws EtaSingular.
StepCoefficients<double> step_coefficients(const NoiseSchedule& schedule, const TimestepGrid& grid, int i);

}  // namespace invlab
