// Shared helpers for the test suites: seeded fills, principal angles,
// and dense reference assemblies.
#pragma once

#include <sdkrylov/core.hpp>

#include <random>

namespace testutil {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(Index rows, Index cols, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(gen);
  return m;
}

inline VectorXd random_vector(Index n, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = nd(gen);
  return v;
}

inline MatrixXd random_spd(Index n, unsigned seed, double ridge = -1.0) {
  MatrixXd b = random_matrix(n, n, seed);
  double r = ridge < 0.0 ? double(n) : ridge;
  return MatrixXd(b * b.transpose()) + r * MatrixXd::Identity(n, n);
}

inline VectorXd random_positive(Index n, unsigned seed, double lo = 0.5, double hi = 2.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> ud(lo, hi);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = ud(gen);
  return v;
}

inline MatrixXd orth(const MatrixXd& b) {
  Eigen::HouseholderQR<MatrixXd> qr(b);
  return MatrixXd(qr.householderQ() * MatrixXd::Identity(b.rows(), b.cols()));
}

// Largest principal angle (radians) between the column spans, through the
// sine formulation sin(theta) = ||(I - Qa Qa') Qb||_2, which stays accurate
// for angles near zero where acos of a cosine saturates at sqrt(eps).
inline double max_principal_angle(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd qa = orth(a), qb = orth(b);
  auto one_sided = [](const MatrixXd& p, const MatrixXd& q) {
    MatrixXd resid = q - p * (p.transpose() * q);
    Eigen::JacobiSVD<MatrixXd> svd(resid);
    double s = svd.singularValues().maxCoeff();
    return std::asin(std::min(1.0, s));
  };
  return std::max(one_sided(qa, qb), one_sided(qb, qa));
}

}  // namespace testutil
