#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "invlab/models.hpp"
#include "invlab/rng.hpp"
#include "invlab/schedule.hpp"

namespace invlab::testing {

inline std::shared_ptr<const NoiseSchedule> shared_default() {
  static auto s = std::make_shared<const NoiseSchedule>(default_schedule());
  return s;
}

inline std::shared_ptr<const NoiseSchedule> shared_table(std::vector<double> values) {
  return std::make_shared<const NoiseSchedule>(
      NoiseSchedule::from_table(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))));
}

inline Latent vec(std::initializer_list<double> v) {
  Latent z(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) z[k++] = x;
  return z;
}

inline Latent randn(Rng& rng, int dim, double scale = 1.0) { return scale * standard_normal(rng, dim); }

// Returns the same eps for every input; counts calls like any predictor.
class ConstantPredictor final : public NoisePredictor {
 public:
  ConstantPredictor(std::shared_ptr<const NoiseSchedule> s, Latent eps) : NoisePredictor(std::move(s)), eps_(eps) {}
  std::unique_ptr<NoisePredictor> clone() const override {
    return std::make_unique<ConstantPredictor>(schedule_ptr(), eps_);
  }

 protected:
  Latent predict(const Latent&, int, const Conditioning&) override { return eps_; }

 private:
  Latent eps_;
};

// eps = f(z, t) for an arbitrary callable.
class LambdaPredictor final : public NoisePredictor {
 public:
  using Fn = std::function<Latent(const Latent&, int)>;
  LambdaPredictor(std::shared_ptr<const NoiseSchedule> s, Fn fn) : NoisePredictor(std::move(s)), fn_(std::move(fn)) {}
  std::unique_ptr<NoisePredictor> clone() const override { return std::make_unique<LambdaPredictor>(schedule_ptr(), fn_); }

 protected:
  Latent predict(const Latent& z, int t, const Conditioning&) override { return fn_(z, t); }

 private:
  Fn fn_;
};

// Central-difference gradient of a scalar function.
inline Latent fd_gradient(const std::function<double(const Latent&)>& f, const Latent& z, double h = 1e-5) {
  Latent g(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    Latent p = z, m = z;
    p[k] += h;
    m[k] -= h;
    g[k] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

// log N(z; mean, var I), written out independently of the library.
inline double log_normal(const Latent& z, const Latent& mean, double var) {
  const double d = static_cast<double>(z.size());
  return -0.5 * (z - mean).squaredNorm() / var - 0.5 * d * std::log(2 * M_PI * var);
}

// log p_t for a mixture pushed through the forward marginal at alpha_bar.
inline double log_mixture_marginal(const GaussianMixtureModel& m, const Latent& z, double abar) {
  double best = -INFINITY;
  std::vector<double> terms;
  for (int k = 0; k < m.components(); ++k) {
    const double var = abar * m.variances[k] + 1 - abar;
    terms.push_back(std::log(m.weights[k]) + log_normal(z, std::sqrt(abar) * Latent(m.means.col(k)), var));
    best = std::max(best, terms.back());
  }
  double sum = 0;
  for (double t : terms) sum += std::exp(t - best);
  return best + std::log(sum);
}

inline double max_abs(const Latent& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace invlab::testing
