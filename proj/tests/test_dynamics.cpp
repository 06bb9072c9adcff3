#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "invlab/conversions.hpp"
#include "invlab/dynamics.hpp"
#include "support.hpp"

using namespace invlab;
using namespace invlab::testing;

TEST(ForwardMarginal, AlphaOneIsIdentity) {
  Latent z0 = vec({0.3, -1.2, 5.0});
  Latent eps = vec({9.0, 9.0, 9.0});
  Latent z = forward_marginal(z0, eps, 1.0);
  EXPECT_TRUE((z.array() == z0.array()).all());
}

TEST(ForwardMarginal, WorkedExample) {
  Latent z = forward_marginal(vec({2.0, 0.0}), vec({0.0, 2.0}), 0.25);
  EXPECT_NEAR(z[0], 1.0, 1e-15);
  EXPECT_NEAR(z[1], std::sqrt(3.0), 1e-15);
}

TEST(ForwardMarginal, NoiseRecoverable) {
  Rng rng(1);
  for (double abar : {0.999, 0.5, 0.003}) {
    Latent z0 = randn(rng, 7), eps = randn(rng, 7);
    Latent z = forward_marginal(z0, eps, abar);
    Latent back = (z - std::sqrt(abar) * z0) / std::sqrt(1 - abar);
    EXPECT_LT(max_abs(back - eps), 1e-12 / std::sqrt(1 - abar));
  }
  EXPECT_THROW(forward_marginal(vec({1.0}), vec({1.0, 2.0}), 0.5), Error);
}

TEST(DataPrediction, ArithmeticAndInversePair) {
  Latent x = data_prediction(vec({1.0, 1.0}), Latent::Zero(2), 0.25);
  EXPECT_NEAR(x[0], 2.0, 1e-15);
  EXPECT_NEAR(x[1], 2.0, 1e-15);

  Rng rng(2);
  for (double abar : {0.95, 0.4, 0.05}) {
    Latent z = randn(rng, 6), target = randn(rng, 6);
    Latent eps = (z - std::sqrt(abar) * target) / std::sqrt(1 - abar);
    EXPECT_LT(max_abs(data_prediction(z, eps, abar) - target), 1e-12);
    EXPECT_LT(max_abs(noise_from_data(z, data_prediction(z, eps, abar), abar) - eps), 1e-12);
    EXPECT_LT(max_abs(data_prediction(z, noise_from_data(z, target, abar), abar) - target), 1e-12);
  }
  try {
    data_prediction(vec({1.0}), vec({0.0}), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AlphaZero);
  }
}

TEST(NoiseFromData, ZeroNoiseCaseAndAlphaOne) {
  Latent z = vec({0.4, -2.0});
  EXPECT_LT(max_abs(noise_from_data(z, Latent(z / std::sqrt(0.7)), 0.7)), 1e-15);
  try {
    noise_from_data(z, z, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AlphaOne);
  }
  // the data-prediction formula solved for eps
  Rng rng(3);
  Latent zz = randn(rng, 5), x0 = randn(rng, 5);
  Latent eps = noise_from_data(zz, x0, 0.3);
  EXPECT_LT(max_abs(std::sqrt(0.3) * x0 + std::sqrt(0.7) * eps - zz), 1e-12);
}

TEST(DdimDenoise, EqualAlphaStepIsIdentity) {
  Rng rng(4);
  Latent z = randn(rng, 5), eps = randn(rng, 5);
  EXPECT_LT(max_abs(ddim_denoise_update(z, eps, 0.42, 0.42) - z), 1e-15);
}

TEST(DdimDenoise, FixedPredictorGivesAffineCombination) {
  auto s = shared_default();
  auto g = make_grid(*s, 20);
  Latent eps0 = vec({0.5, -1.0, 2.0});
  ConstantPredictor p(s, eps0);
  Latent z = vec({1.0, 2.0, 3.0});
  const int i = 7;
  const double a = s->alpha_bar(g[i]), ap = s->alpha_bar(g[i - 1]);
  Latent x0 = (z - std::sqrt(1 - a) * eps0) / std::sqrt(a);
  Latent expected = std::sqrt(ap) * x0 + std::sqrt(1 - ap) * eps0;
  EXPECT_LT(max_abs(ddim_denoise_step(p, *s, g, i, z) - expected), 1e-14);
  EXPECT_EQ(p.nfe(), 1);
  auto d = ddim_denoise_step_detailed(p, *s, g, i, z);
  EXPECT_LT(max_abs(d.data_pred - x0), 1e-14);
  EXPECT_TRUE((d.eps.array() == eps0.array()).all());
}

TEST(DdimDenoise, UnitGaussianIsClosedFormLinearRecursion) {
  auto s = shared_default();
  auto g = make_grid(*s, 25);
  GaussianPredictor p(s, 1.0);
  Rng rng(5);
  Latent z = randn(rng, 6, 3.0);
  // eps = sigma_i z, so each step multiplies by sqrt(abar_{i-1} abar_i) + sigma_{i-1} sigma_i <= 1
  double factor = 1.0;
  for (int i = g.steps(); i >= 1; --i) {
    const double a = s->alpha_bar(g[i]), ap = s->alpha_bar(g[i - 1]);
    const double c = std::sqrt(ap * a) + std::sqrt((1 - ap) * (1 - a));
    EXPECT_LE(c, 1.0 + 1e-15);
    factor *= c;
  }
  Trajectory traj = ddim_denoise(p, *s, g, z);
  EXPECT_LT(max_abs(traj.terminal() - factor * z), 1e-12);
  for (int i = g.steps(); i >= 1; --i) {
    EXPECT_LE(traj.latents[i - 1].norm(), traj.latents[i].norm() * (1 + 1e-14));
  }
}

TEST(DdimDenoise, SingleStepTrajectoryMatchesStep) {
  auto s = shared_default();
  auto g = TimestepGrid::from_indices(*s, {100, 400});
  Rng rng(6);
  auto m = random_gmm(rng, 4, 3);
  GmmPredictor p(s, m), q(s, m);
  Latent z = randn(rng, 4);
  Trajectory traj = ddim_denoise(p, *s, g, z);
  Latent step = ddim_denoise_step(q, *s, g, 1, z);
  EXPECT_TRUE((traj.terminal().array() == step.array()).all());
  EXPECT_EQ(traj.nfe, 1);
}

TEST(DdimDenoise, LedgerShapesAndGmmTerminal) {
  auto s = shared_default();
  auto g = make_grid(*s, 50);
  Rng rng(7);
  GmmPredictor p(s, random_gmm(rng, 8, 3));
  p(Latent::Zero(8), 1);
  Trajectory traj = ddim_denoise(p, *s, g, randn(rng, 8));
  EXPECT_EQ(traj.nfe, 50);
  EXPECT_EQ(p.nfe(), 51);
  EXPECT_EQ(traj.latents.size(), 51u);
  EXPECT_EQ(traj.eps.size(), 50u);
  EXPECT_EQ(traj.data_pred.size(), 50u);
  EXPECT_EQ(traj.direction, Direction::Denoising);
  EXPECT_EQ(traj.terminal().size(), 8);
  EXPECT_TRUE(traj.terminal().allFinite());
}

TEST(DdimDenoise, DataPredictionFormEquivalence) {
  // z_{i-1} = (sigma_{i-1}/sigma_i) z_i + eta' sqrt(abar_{i-1}) x0, with eta' the
  // coefficient of the swapped (t_i -> t_{i-1}) pair.
  auto s = shared_default();
  Rng rng(8);
  for (int n : {5, 50}) {
    auto g = make_grid(*s, n);
    for (int i = 1; i <= n; ++i) {
      const double a = s->alpha_bar(g[i]), ap = s->alpha_bar(g[i - 1]);
      Latent z = randn(rng, 6), eps = randn(rng, 6);
      Latent direct = ddim_denoise_update(z, eps, a, ap);
      auto swapped = coefficients_between(a, ap);
      Latent x0 = data_prediction(z, eps, a);
      Latent rearranged = swapped.noise_ratio * z + swapped.eta * swapped.sqrt_alpha_bar * x0;
      EXPECT_LT(max_abs(direct - rearranged), 1e-12 * std::max(1.0, max_abs(direct))) << n << " " << i;
    }
  }
}

TEST(DdimDenoise, Deterministic) {
  auto s = shared_default();
  auto g = make_grid(*s, 30);
  Rng rng(9);
  auto m = random_gmm(rng, 5, 3);
  Latent z = randn(rng, 5);
  GmmPredictor p(s, m), q(s, m);
  Trajectory a = ddim_denoise(p, *s, g, z), b = ddim_denoise(q, *s, g, z);
  for (std::size_t k = 0; k < a.latents.size(); ++k) ASSERT_TRUE((a.latents[k].array() == b.latents[k].array()).all());
}

TEST(Trajectory, JsonLinesDump) {
  auto s = shared_default();
  auto g = make_grid(*s, 4);
  GaussianPredictor p(s, 1.0);
  Trajectory traj = ddim_denoise(p, *s, g, Latent::Ones(3));
  std::ostringstream out;
  write_trajectory_jsonl(traj, out);
  std::istringstream in(out.str());
  int n = 0;
  for (std::string line; std::getline(in, line); ++n) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("i").get<int>(), n);
    EXPECT_EQ(j.at("t_i").get<int>(), g[n]);
    EXPECT_EQ(j.at("z").size(), 3u);
    if (n == 4) {
      EXPECT_TRUE(j.at("eps").is_null());
    } else {
      EXPECT_EQ(j.at("data_pred").size(), 3u);
    }
  }
  EXPECT_EQ(n, 5);
}
