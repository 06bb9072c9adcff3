#include "invlab/models.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "invlab/conversions.hpp"

namespace invlab {

NoisePredictor::NoisePredictor(std::shared_ptr<const NoiseSchedule> schedule) : schedule_(std::move(schedule)) {
  if (!schedule_) throw Error(ErrorCode::InvalidParams, "predictor needs a schedule");
}

Latent NoisePredictor::operator()(const Latent& z, int t, const Conditioning& c) {
  nfe_.fetch_add(1, std::memory_order_relaxed);
  Latent eps = predict(z, t, c);
  require_same_shape(z, eps, "predictor output");
  return eps;
}

// ---------------------------------------------------------------------------

Latent exact_eps_gaussian(double data_variance, const Latent& z, double alpha_bar) {
  if (!(data_variance > 0.0)) throw Error(ErrorCode::InvalidParams, "data variance must be positive");
  return std::sqrt(1.0 - alpha_bar) * z / (alpha_bar * data_variance + 1.0 - alpha_bar);
}

Latent exact_eps_gaussian(double data_variance, const Latent& z, double alpha_bar, const Latent& mean) {
  require_same_shape(z, mean, "gaussian mean");
  return exact_eps_gaussian(data_variance, Latent(z - std::sqrt(alpha_bar) * mean), alpha_bar);
}

Latent exact_eps_gaussian(double data_variance, const Latent& z, int t, const NoiseSchedule& schedule) {
  return exact_eps_gaussian(data_variance, z, schedule.alpha_bar(t));
}

void GaussianMixtureModel::validate() const {
  const auto k = weights.size();
  if (k < 1) throw Error(ErrorCode::InvalidParams, "mixture needs at least one component");
  if (means.cols() != k || variances.size() != k) {
    throw Error(ErrorCode::InvalidParams, "mixture weights/means/variances disagree on K");
  }
  if (means.rows() < 1) throw Error(ErrorCode::InvalidParams, "mixture dimension must be >= 1");
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::InvalidParams, "mixture weights must lie on the simplex");
  }
  if (!(variances.array() > 0.0).all()) throw Error(ErrorCode::InvalidParams, "mixture variances must be > 0");
  if (!means.allFinite()) throw Error(ErrorCode::NonFinite, "mixture means");
}

Latent GaussianMixtureModel::sample(Rng& rng) const {
  std::discrete_distribution<int> pick(weights.data(), weights.data() + weights.size());
  const int k = pick(rng);
  return means.col(k) + std::sqrt(variances[k]) * standard_normal(rng, dim());
}

double GaussianMixtureModel::marginal_variance() const {
  const Eigen::VectorXd mu = means * weights;
  double total = weights.dot(variances);
  for (int k = 0; k < components(); ++k) total += weights[k] * (means.col(k) - mu).squaredNorm() / dim();
  return total;
}

GaussianMixtureModel random_gmm(Rng& rng, int dim, int components, double mean_scale, double variance_min,
                                double variance_max) {
  if (dim < 1 || components < 1 || !(variance_min > 0.0) || variance_max < variance_min) {
    throw Error(ErrorCode::InvalidParams, "random mixture parameters");
  }
  GaussianMixtureModel m;
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::uniform_real_distribution<double> uniform(variance_min, variance_max);
  m.weights.resize(components);
  for (int k = 0; k < components; ++k) m.weights[k] = gamma(rng);
  m.weights /= m.weights.sum();
  m.means = mean_scale * Eigen::MatrixXd::NullaryExpr(dim, components, [&] {
              return std::normal_distribution<double>()(rng);
            });
  m.variances.resize(components);
  for (int k = 0; k < components; ++k) m.variances[k] = uniform(rng);
  return m;
}

GaussianMixtureModel gmm_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto mu = j.at("means").get<std::vector<std::vector<double>>>();
    const auto var = j.at("variances").get<std::vector<double>>();
    GaussianMixtureModel m;
    m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.variances = Eigen::Map<const Eigen::VectorXd>(var.data(), static_cast<Eigen::Index>(var.size()));
    const auto dim = mu.empty() ? 0 : static_cast<Eigen::Index>(mu.front().size());
    m.means.resize(dim, static_cast<Eigen::Index>(mu.size()));
    for (std::size_t k = 0; k < mu.size(); ++k) {
      if (static_cast<Eigen::Index>(mu[k].size()) != dim) {
        throw Error(ErrorCode::SchemaViolation, "means[" + std::to_string(k) + "]: ragged component mean");
      }
      m.means.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(mu[k].data(), dim);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("gmm: ") + e.what());
  }
}

std::string gmm_to_json(const GaussianMixtureModel& model) {
  nlohmann::json j;
  j["weights"] = std::vector<double>(model.weights.data(), model.weights.data() + model.weights.size());
  j["variances"] = std::vector<double>(model.variances.data(), model.variances.data() + model.variances.size());
  auto means = nlohmann::json::array();
  for (int k = 0; k < model.components(); ++k) {
    const Eigen::VectorXd col = model.means.col(k);
    means.push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  j["means"] = std::move(means);
  return j.dump();
}

Latent exact_eps_gmm(const GaussianMixtureModel& model, const Latent& z, double alpha_bar) {
  if (z.size() != model.dim()) throw Error(ErrorCode::ShapeMismatch, "latent/mixture dimension");
  const double sa = std::sqrt(alpha_bar);
  const double sigma2 = 1.0 - alpha_bar;
  const int k_count = model.components();
  const double d = model.dim();

  Eigen::VectorXd log_resp(k_count);
  Eigen::MatrixXd centered(model.dim(), k_count);
  Eigen::VectorXd var_t(k_count);
  for (int k = 0; k < k_count; ++k) {
    var_t[k] = alpha_bar * model.variances[k] + sigma2;
    centered.col(k) = z - sa * model.means.col(k);
    log_resp[k] = std::log(model.weights[k]) - 0.5 * d * std::log(var_t[k]) -
                  0.5 * centered.col(k).squaredNorm() / var_t[k];
  }
  const double top = log_resp.maxCoeff();
  const Eigen::VectorXd resp = (log_resp.array() - top).exp().matrix();
  const double norm = resp.sum();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw Error(ErrorCode::NonFinite, "mixture responsibilities vanished");

  Latent neg_score = Latent::Zero(model.dim());
  for (int k = 0; k < k_count; ++k) neg_score += (resp[k] / norm / var_t[k]) * centered.col(k);
  return std::sqrt(sigma2) * neg_score;
}

Latent exact_eps_gmm(const GaussianMixtureModel& model, const Latent& z, int t, const NoiseSchedule& schedule) {
  return exact_eps_gmm(model, z, schedule.alpha_bar(t));
}

GaussianPredictor::GaussianPredictor(std::shared_ptr<const NoiseSchedule> schedule, double data_variance, Latent mean)
    : NoisePredictor(std::move(schedule)), variance_(data_variance), mean_(std::move(mean)) {
  if (!(variance_ > 0.0)) throw Error(ErrorCode::InvalidParams, "data variance must be positive");
}

std::unique_ptr<NoisePredictor> GaussianPredictor::clone() const {
  return std::make_unique<GaussianPredictor>(schedule_ptr(), variance_, mean_);
}

Latent GaussianPredictor::predict(const Latent& z, int t, const Conditioning&) {
  const double abar = schedule().alpha_bar(t);
  if (mean_.size() == 0) return exact_eps_gaussian(variance_, z, abar);
  return exact_eps_gaussian(variance_, z, abar, mean_);
}

GmmPredictor::GmmPredictor(std::shared_ptr<const NoiseSchedule> schedule, GaussianMixtureModel model)
    : NoisePredictor(std::move(schedule)), model_(std::move(model)) {
  model_.validate();
}

std::unique_ptr<NoisePredictor> GmmPredictor::clone() const {
  return std::make_unique<GmmPredictor>(schedule_ptr(), model_);
}

Latent GmmPredictor::predict(const Latent& z, int t, const Conditioning&) {
  return exact_eps_gmm(model_, z, schedule().alpha_bar(t));
}

AnchoredPredictor::AnchoredPredictor(std::shared_ptr<const NoiseSchedule> schedule, Latent z0)
    : NoisePredictor(std::move(schedule)), z0_(std::move(z0)) {
  require_finite(z0_, "anchor");
}

std::unique_ptr<NoisePredictor> AnchoredPredictor::clone() const {
  return std::make_unique<AnchoredPredictor>(schedule_ptr(), z0_);
}

Latent AnchoredPredictor::predict(const Latent& z, int t, const Conditioning&) {
  return noise_from_data(z, z0_, schedule().alpha_bar(t));
}

// ---------------------------------------------------------------------------

std::string_view to_string(ErrorCoupling coupling) {
  return coupling == ErrorCoupling::Ar1 ? "ar1" : "constant";
}

ErrorCoupling error_coupling_from_string(std::string_view name) {
  if (name == "ar1") return ErrorCoupling::Ar1;
  if (name == "constant") return ErrorCoupling::Constant;
  throw Error(ErrorCode::InvalidParams, "unknown error coupling '" + std::string(name) + "'");
}

double ErrorModel::gamma_at(int step_index) const {
  if (gamma.size() == 1) return gamma.front();
  if (step_index < 0 || static_cast<std::size_t>(step_index) >= gamma.size()) {
    throw Error(ErrorCode::OutOfRange, "no gamma for step " + std::to_string(step_index));
  }
  return gamma[static_cast<std::size_t>(step_index)];
}

bool ErrorModel::enabled() const {
  for (double g : gamma) {
    if (g > 0.0) return true;
  }
  return false;
}

void ErrorModel::validate() const {
  if (gamma.empty()) throw Error(ErrorCode::InvalidParams, "error model needs a gamma schedule");
  for (double g : gamma) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw Error(ErrorCode::InvalidParams, "gamma must be finite and >= 0");
  }
  if (!(rho >= 0.0 && rho < 1.0)) throw Error(ErrorCode::InvalidParams, "rho must lie in [0, 1)");
}

ErrorChain::ErrorChain(const ErrorModel& model, std::uint64_t trial, int dim)
    : model_(model), dim_(dim), rng_(stream_seed(model.seed, trial, 0x65727272ULL)) {
  model_.validate();
  if (dim_ < 1) throw Error(ErrorCode::InvalidParams, "error dimension must be >= 1");
}

const Latent& ErrorChain::at(int step_index) {
  if (step_index < 0) throw Error(ErrorCode::OutOfRange, "negative step index");
  const double innovation = std::sqrt(1.0 - model_.rho * model_.rho);
  while (static_cast<int>(unit_.size()) <= step_index) {
    const int i = static_cast<int>(unit_.size());
    Latent u = standard_normal(rng_, dim_);
    if (i > 0) {
      if (model_.coupling == ErrorCoupling::Constant) {
        u = unit_.back();
      } else {
        u = model_.rho * unit_.back() + innovation * u;
      }
    }
    errors_.push_back(std::sqrt(model_.gamma_at(i)) * u);
    unit_.push_back(std::move(u));
  }
  return errors_[static_cast<std::size_t>(step_index)];
}

Latent perturbed_eps(NoisePredictor& base, ErrorChain& errors, int step_index, const Latent& z, int t) {
  const double abar = base.schedule().alpha_bar(t);
  const Latent eps = base(z, t);
  const Latent& e = errors.at(step_index);
  require_same_shape(z, e, "injected error");
  return noise_from_data(z, Latent(data_prediction(z, eps, abar) + e), abar);
}

PerturbedPredictor::PerturbedPredictor(std::unique_ptr<NoisePredictor> base, ErrorModel error, TimestepGrid grid,
                                       std::uint64_t trial)
    : NoisePredictor(base ? base->schedule_ptr() : nullptr),
      base_(std::move(base)),
      error_(std::move(error)),
      grid_(std::move(grid)),
      trial_(trial) {
  error_.validate();
}

std::unique_ptr<NoisePredictor> PerturbedPredictor::clone() const {
  return std::make_unique<PerturbedPredictor>(base_->clone(), error_, grid_, trial_);
}

const Latent& PerturbedPredictor::injected_error(int step_index, int dim) {
  if (!chain_) chain_ = std::make_unique<ErrorChain>(error_, trial_, dim);
  if (chain_->dim() != dim) throw Error(ErrorCode::ShapeMismatch, "injected error dimension changed");
  return chain_->at(step_index);
}

Latent PerturbedPredictor::predict(const Latent& z, int t, const Conditioning&) {
  const auto step = grid_.position_of(t);
  if (!step) throw Error(ErrorCode::OutOfRange, "timestep " + std::to_string(t) + " is not on the inversion grid");
  injected_error(*step, static_cast<int>(z.size()));
  return perturbed_eps(*base_, *chain_, *step, z, t);
}

}  // namespace invlab
