#pragma once

#include <cmath>

#include "invlab/latent.hpp"

// Closed-form relations between the clean sample, the noise and the noisy
// latent under the forward marginal z_t = sqrt(abar) z0 + sqrt(1 - abar) eps.
namespace invlab {

template <typename D0, typename D1>
LatentT<typename D0::Scalar> forward_marginal(const Eigen::MatrixBase<D0>& z0, const Eigen::MatrixBase<D1>& eps,
                                              typename D0::Scalar alpha_bar) {
  using std::sqrt;
  require_same_shape(z0, eps);
  return sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps;
}

/// x0 = (z - sqrt(1 - abar) eps) / sqrt(abar)
template <typename D0, typename D1>
LatentT<typename D0::Scalar> data_prediction(const Eigen::MatrixBase<D0>& z, const Eigen::MatrixBase<D1>& eps,
                                             typename D0::Scalar alpha_bar) {
  using std::sqrt;
  require_same_shape(z, eps);
  if (!(alpha_bar > 0)) throw Error(ErrorCode::AlphaZero, "data prediction needs alpha_bar > 0");
  return (z - sqrt(1 - alpha_bar) * eps) / sqrt(alpha_bar);
}

/// eps = (z - sqrt(abar) x0) / sqrt(1 - abar)
template <typename D0, typename D1>
LatentT<typename D0::Scalar> noise_from_data(const Eigen::MatrixBase<D0>& z, const Eigen::MatrixBase<D1>& x0,
                                             typename D0::Scalar alpha_bar) {
  using std::sqrt;
  require_same_shape(z, x0);
  if (!(alpha_bar < 1)) throw Error(ErrorCode::AlphaOne, "noise from data needs alpha_bar < 1");
  return (z - sqrt(alpha_bar) * x0) / sqrt(1 - alpha_bar);
}

}  // namespace invlab
