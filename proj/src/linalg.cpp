#include "zonocert/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace zonocert {

double spectral_norm_estimate(const Eigen::MatrixXd& w, int iters, double rel_tol) {
  if (w.size() == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()) / std::sqrt(static_cast<double>(w.cols()));
  // Deterministic non-symmetric start avoids orthogonality to the top vector in common cases.
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 1e-3 * static_cast<double>(i % 7);
  v.normalize();
  double sigma = 0.0;
  for (int k = 0; k < std::max(1, iters); ++k) {
    Eigen::VectorXd u = w * v;
    const double un = u.norm();
    if (un == 0.0) return 0.0;
    Eigen::VectorXd next = w.transpose() * (u / un);
    const double nn = next.norm();
    if (nn == 0.0) return 0.0;
    v = next / nn;
    const double prev = sigma;
    sigma = nn;
    if (k > 0 && std::abs(sigma - prev) <= rel_tol * sigma) break;
  }
  return sigma;
}

double spectral_norm_holder(const Eigen::MatrixXd& w) {
  if (w.size() == 0) return 0.0;
  const double one = w.cwiseAbs().colwise().sum().maxCoeff();
  const double inf = w.cwiseAbs().rowwise().sum().maxCoeff();
  return std::sqrt(one * inf);
}

double spectral_norm_certified(const Eigen::MatrixXd& w) {
  const double holder = spectral_norm_holder(w);
  if (holder == 0.0) return 0.0;
  const Eigen::MatrixXd gram =
      w.rows() < w.cols() ? Eigen::MatrixXd(w * w.transpose()) : Eigen::MatrixXd(w.transpose() * w);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lmax = std::max(0.0, eig.eigenvalues().maxCoeff());
  const double scale = gram.cwiseAbs().maxCoeff();
  for (double margin = 1e-9; margin < 1.0; margin *= 10.0) {
    const double t = lmax * (1.0 + margin) + margin * scale;
    Eigen::MatrixXd shifted = -gram;
    shifted.diagonal().array() += t;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) return std::min(holder, std::sqrt(t));
  }
  return holder;
}

}  // namespace zonocert
