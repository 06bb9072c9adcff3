#include "invlab/schedule.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace invlab {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::LinearBeta: return "linear-beta";
    case ScheduleKind::ScaledLinearBeta: return "scaled-linear-beta";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::Table: return "table";
  }
  return "table";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "linear-beta") return ScheduleKind::LinearBeta;
  if (name == "scaled-linear-beta") return ScheduleKind::ScaledLinearBeta;
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "table") return ScheduleKind::Table;
  throw Error(ErrorCode::InvalidParams, "unknown schedule kind '" + std::string(name) + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, ScheduleParams params, Eigen::VectorXd alpha_bar)
    : kind_(kind), params_(params), alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.size() < 1) throw Error(ErrorCode::InvalidParams, "empty alpha_bar table");
  for (Eigen::Index t = 0; t < alpha_bar_.size(); ++t) {
    const double v = alpha_bar_[t];
    if (!(v > 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::InvalidParams, "alpha_bar[" + std::to_string(t) + "] outside (0, 1]");
    }
    if (t > 0 && !(v < alpha_bar_[t - 1])) {
      throw Error(ErrorCode::InvalidParams, "alpha_bar not strictly decreasing at t=" + std::to_string(t));
    }
  }
}

NoiseSchedule NoiseSchedule::from_table(Eigen::VectorXd alpha_bar) {
  return NoiseSchedule(ScheduleKind::Table, {}, std::move(alpha_bar));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= steps()) {
    throw Error(ErrorCode::OutOfRange, "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
  }
  return alpha_bar_[t];
}

namespace {

Eigen::VectorXd cumulative_product(const Eigen::VectorXd& betas) {
  Eigen::VectorXd alpha_bar(betas.size());
  double acc = 1.0;
  for (Eigen::Index t = 0; t < betas.size(); ++t) {
    acc *= 1.0 - betas[t];
    alpha_bar[t] = acc;
  }
  return alpha_bar;
}

void check_beta_range(const ScheduleParams& p) {
  if (!(p.beta_start > 0.0 && p.beta_start <= p.beta_end && p.beta_end < 1.0)) {
    throw Error(ErrorCode::InvalidParams, "need 0 < beta_start <= beta_end < 1");
  }
}

Eigen::VectorXd linspace(int n, double lo, double hi) {
  // Eigen's LinSpaced returns `hi` for n == 1; a single step should use `lo`.
  if (n == 1) return Eigen::VectorXd::Constant(1, lo);
  return Eigen::VectorXd::LinSpaced(n, lo, hi);
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int steps, const ScheduleParams& params) {
  if (steps < 1) throw Error(ErrorCode::InvalidParams, "schedule needs T >= 1");
  switch (kind) {
    case ScheduleKind::LinearBeta: {
      check_beta_range(params);
      return NoiseSchedule(kind, params, cumulative_product(linspace(steps, params.beta_start, params.beta_end)));
    }
    case ScheduleKind::ScaledLinearBeta: {
      check_beta_range(params);
      const Eigen::VectorXd roots = linspace(steps, std::sqrt(params.beta_start), std::sqrt(params.beta_end));
      return NoiseSchedule(kind, params, cumulative_product(roots.array().square().matrix()));
    }
    case ScheduleKind::Cosine: {
      if (!(params.cosine_offset >= 0.0) || !(params.max_beta > 0.0 && params.max_beta < 1.0)) {
        throw Error(ErrorCode::InvalidParams, "cosine schedule needs offset >= 0 and 0 < max_beta < 1");
      }
      const double s = params.cosine_offset;
      auto f = [&](double t) {
        const double c = std::cos((t / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
      };
      Eigen::VectorXd betas(steps);
      for (int t = 0; t < steps; ++t) betas[t] = std::min(1.0 - f(t + 1.0) / f(t), params.max_beta);
      return NoiseSchedule(kind, params, cumulative_product(betas));
    }
    case ScheduleKind::Table:
      break;
  }
  throw Error(ErrorCode::InvalidParams, "table schedules are built with NoiseSchedule::from_table");
}

NoiseSchedule default_schedule() { return build_schedule(ScheduleKind::ScaledLinearBeta, 1000, ScheduleParams{}); }

std::string schedule_to_json(const NoiseSchedule& schedule) {
  const auto& p = schedule.params();
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "{\"kind\":\"" << to_string(schedule.kind()) << "\",\"T\":" << schedule.steps() << ",\"params\":{"
      << "\"beta_start\":" << num(p.beta_start) << ",\"beta_end\":" << num(p.beta_end)
      << ",\"cosine_offset\":" << num(p.cosine_offset) << ",\"max_beta\":" << num(p.max_beta) << "},\"alpha_bar\":[";
  for (int t = 0; t < schedule.steps(); ++t) out << (t ? "," : "") << num(schedule.alpha_bars()[t]);
  out << "]}";
  return out.str();
}

NoiseSchedule schedule_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("schedule: ") + e.what());
  }
  try {
    const ScheduleKind kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    const int steps = j.at("T").get<int>();
    ScheduleParams p;
    if (j.contains("params")) {
      const auto& jp = j.at("params");
      p.beta_start = jp.value("beta_start", p.beta_start);
      p.beta_end = jp.value("beta_end", p.beta_end);
      p.cosine_offset = jp.value("cosine_offset", p.cosine_offset);
      p.max_beta = jp.value("max_beta", p.max_beta);
    }
    const auto values = j.at("alpha_bar").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != steps) {
      throw Error(ErrorCode::SchemaViolation, "schedule: alpha_bar length differs from T");
    }
    return NoiseSchedule(kind, p, Eigen::Map<const Eigen::VectorXd>(values.data(), steps));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("schedule: ") + e.what());
  }
}

TimestepGrid TimestepGrid::from_indices(const NoiseSchedule& schedule, std::vector<int> indices) {
  if (indices.size() < 2) throw Error(ErrorCode::GridDegenerate, "grid needs at least one step");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= schedule.steps()) {
      throw Error(ErrorCode::OutOfRange, "grid index " + std::to_string(indices[k]) + " outside schedule");
    }
    if (k > 0 && indices[k] <= indices[k - 1]) {
      throw Error(ErrorCode::GridDegenerate, "grid indices must be strictly increasing");
    }
  }
  if (!(schedule.alpha_bar(indices.front()) < 1.0)) {
    throw Error(ErrorCode::GridDegenerate, "alpha_bar at t_0 must be < 1");
  }
  return TimestepGrid(std::move(indices));
}

std::optional<int> TimestepGrid::position_of(int t) const {
  // indices_ is sorted
  const auto it = std::lower_bound(indices_.begin(), indices_.end(), t);
  if (it == indices_.end() || *it != t) return std::nullopt;
  return static_cast<int>(it - indices_.begin());
}

TimestepGrid make_grid(const NoiseSchedule& schedule, int steps, int offset) {
  if (steps < 2) throw Error(ErrorCode::GridDegenerate, "need N >= 2 inversion steps");
  if (offset < 0 || offset >= schedule.steps()) throw Error(ErrorCode::GridDegenerate, "offset outside schedule");
  const int stride = (schedule.steps() - offset) / steps;
  if (stride < 1) {
    throw Error(ErrorCode::GridDegenerate, std::to_string(steps) + " steps do not fit in " +
                                               std::to_string(schedule.steps() - offset) + " timesteps");
  }
  std::vector<int> indices(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) indices[i] = std::min(offset + i * stride, schedule.steps() - 1);
  return TimestepGrid::from_indices(schedule, std::move(indices));
}

StepCoefficients<double> step_coefficients(const NoiseSchedule& schedule, const TimestepGrid& grid, int i) {
  if (i < 1 || i > grid.steps()) {
    throw Error(ErrorCode::OutOfRange, "step " + std::to_string(i) + " outside [1, " + std::to_string(grid.steps()) + "]");
  }
  return require_nonsingular(
      coefficients_between(schedule.alpha_bar(grid[i - 1]), schedule.alpha_bar(grid[i])));
}

}  // namespace invlab
