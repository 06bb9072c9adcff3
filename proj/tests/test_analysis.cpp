#include <cmath>
#include <numeric>

#include <gtest/gtest.h>
#include <json.hpp>

#include "invlab/analysis.hpp"
#include "invlab/inversion.hpp"
#include "support.hpp"

using namespace invlab;
using namespace invlab::testing;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

ErrorStatsConfig stats_config(double gamma, double rho, std::int64_t trials) {
  ErrorStatsConfig c;
  c.trials = trials;
  c.error.gamma = {gamma};
  c.error.rho = rho;
  c.error.seed = 11;
  c.seed = 5;
  return c;
}

double hist_mean(const Histogram& h) {
  double s = 0;
  for (int k = 0; k < h.bins(); ++k) s += 0.5 * (h.bin_left(k) + h.bin_right(k)) * h.counts[k];
  return s / h.total();
}

double hist_sd(const Histogram& h) {
  const double m = hist_mean(h);
  double s = 0;
  for (int k = 0; k < h.bins(); ++k) {
    const double c = 0.5 * (h.bin_left(k) + h.bin_right(k)) - m;
    s += c * c * h.counts[k];
  }
  return std::sqrt(s / h.total());
}

}  // namespace

TEST(EstimationError, Examples) {
  Latent z = vec({0.3, -1.0, 2.0});
  EXPECT_EQ(max_abs(estimation_error(z, z)), 0.0);
  Latent d = estimation_error(vec({1.0, 2.0}), vec({0.0, 2.0}));
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[1], 0.0);
  EXPECT_THROW(estimation_error(vec({1.0}), vec({1.0, 2.0})), Error);
}

TEST(EstimatorKind, NamesRoundTrip) {
  for (auto k : {EstimatorKind::DdimPrev, EstimatorKind::Ife, EstimatorKind::NoApprox}) {
    EXPECT_EQ(estimator_from_string(to_string(k)), k);
  }
  EXPECT_THROW(estimator_from_string("ddim"), Error);
}

TEST(DdimBiasMean, ZeroInputsAndEqualAlpha) {
  auto s = shared_default();
  auto g = make_grid(*s, 20);
  EXPECT_EQ(max_abs(ddim_bias_mean(*s, g, 4, Latent::Zero(3), Latent::Zero(3))), 0.0);

  EXPECT_EQ(max_abs(ddim_bias_mean(0.6, 0.6, vec({1.0, 2.0}), vec({-1.0, 0.5}))), 0.0);
  Rng rng(4);
  Latent zp = randn(rng, 3), z0 = randn(rng, 3);
  EXPECT_LT(max_abs(ddim_bias_mean(*s, g, 4, zp, z0) - ddim_bias_mean(s->alpha_bar(g[3]), s->alpha_bar(g[4]), zp, z0)),
            1e-15);
  EXPECT_THROW(ddim_bias_mean(*s, g, 21, zp, z0), Error);
}

TEST(DdimBiasMean, ClosedForm) {
  auto s = shared_default();
  auto g = make_grid(*s, 20);
  Rng rng(1);
  Latent zp = randn(rng, 4), z0 = randn(rng, 4);
  for (int i : {1, 10, 20}) {
    const double a = s->alpha_bar(g[i]), ap = s->alpha_bar(g[i - 1]);
    const double r = std::sqrt(1 - a) / std::sqrt(1 - ap);
    const double eta = 1 - std::sqrt(ap) / std::sqrt(a) * r;
    Latent expected = (r - 1) * zp + eta * std::sqrt(a) * z0;
    EXPECT_LT(max_abs(ddim_bias_mean(*s, g, i, zp, z0) - expected), 1e-12);
  }
}

TEST(DdimBiasMean, MonteCarloWithinFourStandardErrors) {
  auto c = stats_config(0.01, 0.3, 10000);
  c.estimators = {EstimatorKind::DdimPrev};
  auto rep = run_error_stats(c);
  const auto& es = rep.at(EstimatorKind::DdimPrev);
  for (const auto& st : es.steps) {
    for (int d = 0; d < rep.dim; ++d) {
      const double se = std::sqrt(st.variance[d] / rep.trials);
      EXPECT_LE(std::abs(st.mean[d] - st.theory_mean[d]), 4 * se) << "step " << st.step << " coord " << d;
    }
  }
}

TEST(TheoryVariance, Examples) {
  EXPECT_EQ(theory_variance(EstimatorKind::Ife, -3.0, 0.9, 0.01, 0.01, 1.0), 0.0);
  const double ife0 = theory_variance(EstimatorKind::Ife, -3.0, 0.9, 0.01, 0.01, 0.0);
  const double na = theory_variance(EstimatorKind::NoApprox, -3.0, 0.9, 0.01, 0.01, 0.0);
  EXPECT_NEAR(ife0 / na, 2.0, 1e-14);
  EXPECT_NEAR(na, 9 * 0.9 * 0.01, 1e-15);
  EXPECT_NEAR(theory_variance(EstimatorKind::Ife, -3.0, 0.9, 0.01, 0.01, 0.75) / na, 0.5, 1e-14);
  EXPECT_NEAR(theory_variance(EstimatorKind::Ife, 2.0, 0.5, 0.04, 0.01, 0.5), 4 * 0.5 * (0.05 - 2 * 0.5 * 0.02),
              1e-15);
  EXPECT_TRUE(std::isnan(theory_variance(EstimatorKind::DdimPrev, -3.0, 0.9, 0.01, 0.01, 0.0)));
}

TEST(Histogram, SingleSampleAndUniformGrid) {
  std::vector<double> one{3.5};
  auto h1 = histogram(one, 1);
  ASSERT_EQ(h1.bins(), 1);
  EXPECT_EQ(h1.counts[0], 1u);

  std::vector<double> grid(100);
  for (int k = 0; k < 100; ++k) grid[k] = (k + 0.5) / 100.0;
  auto h = histogram(grid, 10, std::make_pair(0.0, 1.0));
  for (auto c : h.counts) EXPECT_EQ(c, 10u);
  auto hd = histogram(grid, 10);
  EXPECT_EQ(hd.total(), 100u);
  EXPECT_EQ(hd.lo, grid.front());
  EXPECT_EQ(hd.hi, grid.back());
}

TEST(Histogram, ErrorsAndClamping) {
  std::vector<double> none;
  try {
    histogram(none, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySamples);
  }
  std::vector<double> xs{-10, 0.5, 10};
  EXPECT_THROW(histogram(xs, 0), Error);
  EXPECT_THROW(histogram(xs, 3, std::make_pair(1.0, 1.0)), Error);
  auto h = histogram(xs, 2, std::make_pair(0.0, 1.0));
  // 0.5 opens the right bin
  EXPECT_EQ(h.counts[0], 1u);
  EXPECT_EQ(h.counts[1], 2u);
  EXPECT_EQ(histogram_csv(h), "bin_left,bin_right,count\n0,0.5,1\n0.5,1,2\n");
}

TEST(Histogram, GaussianCountsMatchMultinomialOracle) {
  const int n = 100000, bins = 20;
  Rng rng(2);
  Latent x = standard_normal(rng, n);
  std::span<const double> samples(x.data(), static_cast<std::size_t>(n));
  auto h = histogram(samples, bins, std::make_pair(-4.0, 4.0));
  for (int k = 0; k < bins; ++k) {
    // edge bins absorb the clamped tails
    const double lo = k == 0 ? 0.0 : normal_cdf(h.bin_left(k));
    const double hi = k == bins - 1 ? 1.0 : normal_cdf(h.bin_right(k));
    const double p = hi - lo;
    EXPECT_LE(std::abs(h.counts[k] - n * p), 5 * std::sqrt(n * p * (1 - p))) << k;
  }
}

TEST(RunningMoments, MergeMatchesSequential) {
  Rng rng(3);
  Latent x = randn(rng, 1001, 3.0);
  RunningMoments all, a, b;
  for (int k = 0; k < x.size(); ++k) {
    all.add(x[k]);
    (k < 377 ? a : b).add(x[k]);
  }
  a.merge(b);
  EXPECT_EQ(a.n, all.n);
  EXPECT_NEAR(a.mean, all.mean, 1e-13);
  EXPECT_NEAR(a.variance(), all.variance(), 1e-12);
  const double mean = x.mean();
  EXPECT_NEAR(all.variance(), (x.array() - mean).square().sum() / 1000.0, 1e-12);
  EXPECT_NEAR(all.mean_square(), x.squaredNorm() / 1001.0, 1e-12);
}

TEST(ErrorStats, ZeroGammaIsPointMass) {
  auto rep = run_error_stats(stats_config(0.0, 0.0, 50));
  // no-approx rebuilds z_true with the same arithmetic: exactly zero
  const auto& na = rep.at(EstimatorKind::NoApprox);
  for (const auto& st : na.steps) {
    EXPECT_EQ(max_abs(st.mean), 0.0);
    EXPECT_EQ(st.mean_square, 0.0);
  }
  for (const auto* h : {&na.sample_mean_hist, &na.coordinate_hist, &na.sample_mse_hist}) {
    const auto nonzero = std::count_if(h->counts.begin(), h->counts.end(), [](auto n) { return n > 0; });
    EXPECT_EQ(nonzero, 1);
    EXPECT_EQ(h->lo, -0.5);
    EXPECT_EQ(h->hi, 0.5);
  }
  // IFE goes through the extraction division, so zero holds to a few ulps
  const auto& ife = rep.at(EstimatorKind::Ife);
  for (const auto& st : ife.steps) EXPECT_LT(st.mean_square, 1e-30);
  EXPECT_LT(std::max(std::abs(ife.coordinate_hist.lo), std::abs(ife.coordinate_hist.hi)), 1e-14);
}

TEST(ErrorStats, ConstantErrorCancelsForIfe) {
  auto c = stats_config(0.01, 0.0, 200);
  c.error.coupling = ErrorCoupling::Constant;
  auto rep = run_error_stats(c);
  const auto& es = rep.at(EstimatorKind::Ife);
  for (const auto& st : es.steps) {
    if (st.step == 1) continue;  // the initial estimate has no error term
    EXPECT_LT(max_abs(st.mean), 1e-12) << st.step;
    EXPECT_LT(st.mean_square, 1e-24) << st.step;
  }
  EXPECT_GT(rep.at(EstimatorKind::NoApprox).steps[5].mean_square, 1e-4);
}

TEST(ErrorStats, TheoryAgreementAndMeanTest) {
  for (double rho : {0.0, 0.9}) {
    auto rep = run_error_stats(stats_config(0.01, rho, 10000));
    for (auto k : {EstimatorKind::Ife, EstimatorKind::NoApprox}) {
      for (const auto& st : rep.at(k).steps) {
        ASSERT_GT(st.theory_variance, 0.0);
        for (int d = 0; d < rep.dim; ++d) {
          EXPECT_LE(std::abs(st.variance[d] - st.theory_variance) / st.theory_variance, 0.1)
              << to_string(k) << " rho " << rho << " step " << st.step << " coord " << d;
          EXPECT_LE(std::abs(st.mean[d]), 4 * std::sqrt(st.theory_variance / rep.trials))
              << to_string(k) << " rho " << rho << " step " << st.step << " coord " << d;
        }
      }
    }
  }
}

TEST(ErrorStats, CorrelatedErrorsShiftIfeVarianceLeft) {
  auto rep = run_error_stats(stats_config(0.01, 0.9, 10000));
  const auto& ife = rep.at(EstimatorKind::Ife);
  const auto& na = rep.at(EstimatorKind::NoApprox);
  // E[per-sample variance] at a step equals the per-coordinate theory variance.
  double ife_theory = 0, na_theory = 0;
  for (std::size_t k = 0; k < ife.steps.size(); ++k) {
    ife_theory += ife.steps[k].theory_variance / ife.steps.size();
    na_theory += na.steps[k].theory_variance / na.steps.size();
  }
  const double ife_mean = hist_mean(ife.sample_variance_hist), na_mean = hist_mean(na.sample_variance_hist);
  EXPECT_LT(ife_mean, na_mean);
  EXPECT_LE(std::abs(ife_mean / na_mean - ife_theory / na_theory) / (ife_theory / na_theory), 0.1);

  // Both mean histograms sit at zero; no-approx spreads wider when rho > 0.5.
  for (const auto* es : {&ife, &na}) {
    EXPECT_LE(std::abs(hist_mean(es->sample_mean_hist)), 0.1 * hist_sd(es->sample_mean_hist));
  }
  EXPECT_GT(hist_sd(na.sample_mean_hist), hist_sd(ife.sample_mean_hist));
}

TEST(ErrorStats, CountsConserveSamplesTimesDim) {
  auto c = stats_config(0.01, 0.5, 300);
  auto rep = run_error_stats(c);
  for (const auto& es : rep.estimators) {
    EXPECT_EQ(es.coordinate_hist.total(), static_cast<std::size_t>(300 * 20 * 8));
    EXPECT_EQ(es.sample_mean_hist.total(), static_cast<std::size_t>(300 * 20));
    EXPECT_EQ(es.sample_variance_hist.total(), static_cast<std::size_t>(300 * 20));
    EXPECT_EQ(es.coordinate_hist.bins(), 50);
    EXPECT_EQ(es.steps.size(), 20u);
  }
}

TEST(ErrorStats, ThreadCountDoesNotChangeResults) {
  auto c = stats_config(0.02, 0.6, 700);
  c.threads = 1;
  const std::string one = stats_to_json(run_error_stats(c));
  c.threads = 4;
  const std::string four = stats_to_json(run_error_stats(c));
  EXPECT_EQ(one, four);
}

TEST(ErrorStats, JsonShape) {
  auto c = stats_config(0.01, 0.0, 20);
  c.steps = 5;
  auto j = nlohmann::json::parse(stats_to_json(run_error_stats(c)));
  EXPECT_EQ(j.at("trials").get<int>(), 20);
  EXPECT_EQ(j.at("z0").size(), 8u);
  ASSERT_EQ(j.at("estimators").size(), 3u);
  const auto& e = j.at("estimators")[0];
  EXPECT_EQ(e.at("estimator").get<std::string>(), "ddim-prev");
  EXPECT_EQ(e.at("per_step").at("mean").size(), 5u);
  EXPECT_TRUE(e.at("per_step").at("theory_variance")[0].is_null());
  EXPECT_FALSE(j.at("estimators")[1].at("per_step").at("theory_variance")[0].is_null());
  EXPECT_EQ(e.at("histograms").at("coordinate").at("counts").size(), 50u);
}

TEST(ErrorStats, ConfigValidation) {
  auto c = stats_config(0.01, 0.0, 1);
  EXPECT_THROW(run_error_stats(c), Error);
  c.trials = 10;
  c.estimators.clear();
  EXPECT_THROW(run_error_stats(c), Error);
  c = stats_config(0.01, 1.5, 10);
  EXPECT_THROW(run_error_stats(c), Error);
  c = stats_config(0.01, 0.0, 10);
  c.error.gamma = {0.01, 0.02};
  EXPECT_THROW(run_error_stats(c), Error);
}
