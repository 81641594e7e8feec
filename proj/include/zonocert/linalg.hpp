#pragma once

#include <Eigen/Dense>

namespace zonocert {

/// Power-iteration estimate of sigma_max(W). A lower estimate in general; used
/// for projection during training, never for certificates.
double spectral_norm_estimate(const Eigen::MatrixXd& w, int iters = 100, double rel_tol = 1e-8);

/// sqrt(||W||_1 ||W||_inf): cheap sound upper bound on sigma_max(W).
double spectral_norm_holder(const Eigen::MatrixXd& w);

/// Sound upper bound on sigma_max(W): an SVD value inflated by a relative
/// margin and then verified by a Cholesky factorization of t I - W^T W.
/// Never exceeds spectral_norm_holder(W).
double spectral_norm_certified(const Eigen::MatrixXd& w);

}  // namespace zonocert
