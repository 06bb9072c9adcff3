#pragma once

#include <Eigen/Dense>

#include "invlab/error.hpp"

namespace invlab {

template <typename Scalar>
using LatentT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Flat latent state z_t. Shape metadata is the vector length; images and
/// other structured tensors are flattened by the caller.
using Latent = LatentT<double>;

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& z, const char* what = "latent") {
  if (!z.allFinite()) throw Error(ErrorCode::NonFinite, std::string(what) + " contains NaN or Inf");
}

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                        const char* what = "latent") {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.rows()) +
                                              " vs " + std::to_string(b.rows()));
  }
}

}  // namespace invlab
