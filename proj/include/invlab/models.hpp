#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "invlab/latent.hpp"
#include "invlab/rng.hpp"
#include "invlab/schedule.hpp"

namespace invlab {

/// Opaque conditioning token. The analytic predictors ignore it.
struct Conditioning {
  std::string prompt;
};

/// eps(z, t, c) with a ledger of function evaluations.
///
/// Instances are owned by one trial at a time; the counter is atomic so a
/// shared instance still counts correctly, but PerturbedPredictor keeps a
/// per-trial error cache that must not be shared.
class NoisePredictor {
 public:
  explicit NoisePredictor(std::shared_ptr<const NoiseSchedule> schedule);
  virtual ~NoisePredictor() = default;

  NoisePredictor(const NoisePredictor&) = delete;
  NoisePredictor& operator=(const NoisePredictor&) = delete;

  Latent operator()(const Latent& z, int t, const Conditioning& c = {});

  long nfe() const { return nfe_.load(std::memory_order_relaxed); }
  void reset_nfe() { nfe_.store(0, std::memory_order_relaxed); }

  const NoiseSchedule& schedule() const { return *schedule_; }
  const std::shared_ptr<const NoiseSchedule>& schedule_ptr() const { return schedule_; }

  /// Fresh instance with the same behavior and a zeroed counter.
  virtual std::unique_ptr<NoisePredictor> clone() const = 0;

 protected:
  virtual Latent predict(const Latent& z, int t, const Conditioning& c) = 0;

 private:
  std::shared_ptr<const NoiseSchedule> schedule_;
  std::atomic<long> nfe_{0};
};

inline long nfe(const NoisePredictor& predictor) { return predictor.nfe(); }

// ---------------------------------------------------------------------------
// Exact predictors

/// eps* for data ~ N(mean, s2 I): sqrt(1-abar) (z - sqrt(abar) mean) / (abar s2 + 1 - abar).
Latent exact_eps_gaussian(double data_variance, const Latent& z, double alpha_bar);
Latent exact_eps_gaussian(double data_variance, const Latent& z, double alpha_bar, const Latent& mean);
Latent exact_eps_gaussian(double data_variance, const Latent& z, int t, const NoiseSchedule& schedule);

struct GaussianMixtureModel {
  Eigen::VectorXd weights;    // K, on the simplex
  Eigen::MatrixXd means;      // dim x K
  Eigen::VectorXd variances;  // K isotropic variances

  int dim() const { return static_cast<int>(means.rows()); }
  int components() const { return static_cast<int>(weights.size()); }

  /// Throws InvalidParams on an off-simplex weight vector, non-positive
  /// variances or mismatched sizes.
  void validate() const;

  Latent sample(Rng& rng) const;
  /// Per-coordinate variance of the mixture, averaged over coordinates.
  double marginal_variance() const;

  bool operator==(const GaussianMixtureModel& o) const {
    return weights == o.weights && means == o.means && variances == o.variances;
  }
};

/// Random K-component mixture: Dirichlet(1) weights, N(0, mean_scale^2 I)
/// means, variances uniform in [variance_min, variance_max].
GaussianMixtureModel random_gmm(Rng& rng, int dim, int components, double mean_scale = 2.0,
                                double variance_min = 0.1, double variance_max = 0.5);

/// JSON {"weights": [...], "means": [[...], ...], "variances": [...]}; means
/// holds one row per component.
GaussianMixtureModel gmm_from_json(std::string_view text);
std::string gmm_to_json(const GaussianMixtureModel& model);

/// Exact eps* = -sqrt(1 - abar) grad log p_t(z) for the diffused mixture,
/// with log-sum-exp responsibilities.
Latent exact_eps_gmm(const GaussianMixtureModel& model, const Latent& z, double alpha_bar);
Latent exact_eps_gmm(const GaussianMixtureModel& model, const Latent& z, int t, const NoiseSchedule& schedule);

class GaussianPredictor final : public NoisePredictor {
 public:
  GaussianPredictor(std::shared_ptr<const NoiseSchedule> schedule, double data_variance, Latent mean = {});
  std::unique_ptr<NoisePredictor> clone() const override;
  double data_variance() const { return variance_; }

 protected:
  Latent predict(const Latent& z, int t, const Conditioning& c) override;

 private:
  double variance_;
  Latent mean_;
};

class GmmPredictor final : public NoisePredictor {
 public:
  GmmPredictor(std::shared_ptr<const NoiseSchedule> schedule, GaussianMixtureModel model);
  std::unique_ptr<NoisePredictor> clone() const override;
  const GaussianMixtureModel& model() const { return model_; }

 protected:
  Latent predict(const Latent& z, int t, const Conditioning& c) override;

 private:
  GaussianMixtureModel model_;
};

/// Predictor whose data prediction is the known clean sample z0 at every
/// (z, t). Wrapped in PerturbedPredictor it realizes x0_hat = z0 + e_t with e
/// independent of the evaluation point, which makes the explicit fixed-point
/// form an exact identity.
class AnchoredPredictor final : public NoisePredictor {
 public:
  AnchoredPredictor(std::shared_ptr<const NoiseSchedule> schedule, Latent z0);
  std::unique_ptr<NoisePredictor> clone() const override;

 protected:
  Latent predict(const Latent& z, int t, const Conditioning& c) override;

 private:
  Latent z0_;
};

// ---------------------------------------------------------------------------
// Error injection

enum class ErrorCoupling {
  Ar1,       // u_i = rho u_{i-1} + sqrt(1 - rho^2) xi_i
  Constant,  // u_i = u_0 for every step (the rho -> 1 limit)
};

std::string_view to_string(ErrorCoupling coupling);
ErrorCoupling error_coupling_from_string(std::string_view name);

/// Gaussian data-prediction errors e_i = sqrt(gamma_i) u_i over grid
/// positions i = 0..N, with u a stationary unit-variance chain.
struct ErrorModel {
  std::vector<double> gamma{0.01};  // one entry = constant; otherwise indexed by grid position
  double rho = 0.0;
  std::uint64_t seed = 0;
  ErrorCoupling coupling = ErrorCoupling::Ar1;

  double gamma_at(int step_index) const;
  bool enabled() const;
  void validate() const;

  bool operator==(const ErrorModel&) const = default;
};

/// The error sequence of one trial. e_i is a pure function of
/// (seed, trial, i); later steps are generated on demand by extending the
/// same RNG stream, so access order does not matter.
class ErrorChain {
 public:
  ErrorChain(const ErrorModel& model, std::uint64_t trial, int dim);

  const Latent& at(int step_index);
  int dim() const { return dim_; }

 private:
  ErrorModel model_;
  int dim_;
  Rng rng_;
  std::vector<Latent> unit_;    // u_i
  std::vector<Latent> errors_;  // e_i
};

/// Shifts the base data prediction by e_{step}, where step is the grid
/// position of t, and converts back to eps.
class PerturbedPredictor final : public NoisePredictor {
 public:
  PerturbedPredictor(std::unique_ptr<NoisePredictor> base, ErrorModel error, TimestepGrid grid, std::uint64_t trial);
  std::unique_ptr<NoisePredictor> clone() const override;

  /// Injected error for a grid position (sampled on first use, then cached).
  const Latent& injected_error(int step_index, int dim);
  NoisePredictor& base() { return *base_; }

 protected:
  Latent predict(const Latent& z, int t, const Conditioning& c) override;

 private:
  std::unique_ptr<NoisePredictor> base_;
  ErrorModel error_;
  TimestepGrid grid_;
  std::uint64_t trial_;
  std::unique_ptr<ErrorChain> chain_;
};

/// eps of `base` at (z, t) shifted so that its data prediction moves by
/// e_{step_index} drawn from `errors`.
Latent perturbed_eps(NoisePredictor& base, ErrorChain& errors, int step_index, const Latent& z, int t);

}  // namespace invlab
