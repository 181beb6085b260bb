#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sdkrylov/solvers.hpp"

namespace sdkrylov {

// Smoothed absolute value and its tangent majorizer at tk.
inline double phi_eps(double t, double epsilon) { return std::sqrt(t * t + epsilon); }

inline double psi_eps(double t, double tk, double epsilon) {
  double pk = phi_eps(tk, epsilon);
  return pk + (t * t - tk * tk) / (2.0 * pk);
}

namespace detail {

inline VectorXd centered_data(const InverseProblem& p) {
  if (p.mu1.isZero(0.0) && p.mu2.isZero(0.0)) return p.d;
  return p.d - p.a.forward(p.mu1 + p.mu2);
}

}  // namespace detail

// Smoothed full-space objective
//   ||A Q x + A xi - c||_{R^{-1}}^2 + lambda^2 ||x||_Q^2
//     + alpha^2 sum_j phi_eps(xi_j),
// with c the mean-centered data.
inline double f_eps(const VectorXd& x, const VectorXd& xi, const InverseProblem& p, double lambda,
                    double alpha, double epsilon) {
  if (!(epsilon > 0.0)) throw std::domain_error("f_eps: epsilon must be positive");
  detail::check_length("f_eps", "x", p.a.cols(), x.size());
  detail::check_length("f_eps", "xi", p.a.cols(), xi.size());
  VectorXd qx = p.q.apply(x);
  VectorXd w = p.a.forward(qx) + p.a.forward(xi) - detail::centered_data(p);
  double fit = w.dot(p.r.apply_inverse(w));
  double smooth = lambda * lambda * x.dot(qx);
  double sparse = 0.0;
  for (Index j = 0; j < xi.size(); ++j) sparse += phi_eps(xi[j], epsilon);
  return fit + smooth + alpha * alpha * sparse;
}

// Gradient of f_eps in (x, xi), for stationarity audits.
inline std::pair<VectorXd, VectorXd> f_eps_gradient(const VectorXd& x, const VectorXd& xi,
                                                    const InverseProblem& p, double lambda,
                                                    double alpha, double epsilon) {
  if (!(epsilon > 0.0)) throw std::domain_error("f_eps_gradient: epsilon must be positive");
  VectorXd qx = p.q.apply(x);
  VectorXd w = p.a.forward(qx) + p.a.forward(xi) - detail::centered_data(p);
  VectorXd g = p.a.adjoint(p.r.apply_inverse(w));
  VectorXd gx = 2.0 * p.q.apply(g) + 2.0 * lambda * lambda * qx;
  VectorXd gxi = 2.0 * g;
  for (Index j = 0; j < xi.size(); ++j)
    gxi[j] += alpha * alpha * xi[j] / phi_eps(xi[j], epsilon);
  return {gx, gxi};
}

// Majorizing surrogate: the quadratic parts of f_eps plus the tangent
// majorizer of the smoothed 1-norm at (xk, xik).
inline double surrogate(const VectorXd& x, const VectorXd& xi, const VectorXd& xk,
                        const VectorXd& xik, const InverseProblem& p, double lambda, double alpha,
                        double epsilon) {
  if (!(epsilon > 0.0)) throw std::domain_error("surrogate: epsilon must be positive");
  detail::check_length("surrogate", "xik", xi.size(), xik.size());
  detail::check_length("surrogate", "xk", x.size(), xk.size());
  VectorXd qx = p.q.apply(x);
  VectorXd w = p.a.forward(qx) + p.a.forward(xi) - detail::centered_data(p);
  double fit = w.dot(p.r.apply_inverse(w));
  double smooth = lambda * lambda * x.dot(qx);
  double sparse = 0.0;
  for (Index j = 0; j < xi.size(); ++j) sparse += psi_eps(xi[j], xik[j], epsilon);
  return fit + smooth + alpha * alpha * sparse;
}

struct MmIterate {
  VectorXd x, xi;
  double objective = 0.0;
};

namespace detail {

// Dense pieces of the reweighted least-squares step, built once per run.
struct MmDense {
  MatrixXd bq;    // R^{-1/2} A Q
  MatrixXd b;     // R^{-1/2} A
  MatrixXd qh;    // Q^{1/2}
  VectorXd rhs0;  // R^{-1/2} c
  Index m = 0, n = 0;

  explicit MmDense(const InverseProblem& p) : m(p.a.rows()), n(p.a.cols()) {
    MatrixXd ad = densify(p.a);
    MatrixXd qd(n, n), rinvd(m, m);
    for (Index j = 0; j < n; ++j) qd.col(j) = p.q.apply(VectorXd::Unit(n, j));
    for (Index j = 0; j < m; ++j) rinvd.col(j) = p.r.apply_inverse(VectorXd::Unit(m, j));
    auto sqrt_spd = [](const MatrixXd& s) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (s + s.transpose()));
      return MatrixXd(eig.eigenvectors() *
                      eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                      eig.eigenvectors().transpose());
    };
    MatrixXd rish = sqrt_spd(rinvd);  // R^{-1/2}
    qh = sqrt_spd(qd);
    b = rish * ad;
    bq = b * qd;
    rhs0 = rish * centered_data(p);
  }

  // Exact minimizer of the surrogate at weights derived from xik.
  std::pair<VectorXd, VectorXd> solve_step(const VectorXd& xik, double lambda, double alpha,
                                           double epsilon) const {
    MatrixXd s = MatrixXd::Zero(m + 2 * n, 2 * n);
    s.topLeftCorner(m, n) = bq;
    s.topRightCorner(m, n) = b;
    s.block(m, 0, n, n) = lambda * qh;
    for (Index j = 0; j < n; ++j)
      s(m + n + j, n + j) = alpha / std::sqrt(2.0 * phi_eps(xik[j], epsilon));
    VectorXd rhs = VectorXd::Zero(m + 2 * n);
    rhs.head(m) = rhs0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(s);
    if (qr.rank() < 2 * n)
      throw RankDeficiencyError("mm_solve: stacked system rank " + std::to_string(qr.rank()) +
                                " of " + std::to_string(2 * n) +
                                "; needs positive lambda and alpha or full-column-rank blocks");
    VectorXd sol = qr.solve(rhs);
    return {sol.head(n), sol.tail(n)};
  }
};

}  // namespace detail

// Majorization-minimization from (0, 0): each step minimizes the surrogate
// exactly via a dense stacked least-squares solve. Returns the initial
// iterate followed by n_iters updates, each with its objective value.
inline std::vector<MmIterate> mm_solve(const InverseProblem& p, double lambda, double alpha,
                                       double epsilon, int n_iters) {
  if (!(epsilon > 0.0)) throw std::domain_error("mm_solve: epsilon must be positive");
  detail::MmDense dense(p);
  const Index n = p.a.cols();
  std::vector<MmIterate> out;
  MmIterate it;
  it.x = VectorXd::Zero(n);
  it.xi = VectorXd::Zero(n);
  it.objective = f_eps(it.x, it.xi, p, lambda, alpha, epsilon);
  out.push_back(it);
  for (int k = 0; k < n_iters; ++k) {
    auto [x, xi] = dense.solve_step(out.back().xi, lambda, alpha, epsilon);
    MmIterate next;
    next.x = std::move(x);
    next.xi = std::move(xi);
    next.objective = f_eps(next.x, next.xi, p, lambda, alpha, epsilon);
    out.push_back(std::move(next));
  }
  return out;
}

// MM run to convergence by relative objective change; the smoothed-posterior
// mode used as a brute-force reference for the projected solvers.
inline MmIterate direct_map_small(const InverseProblem& p, double lambda, double alpha,
                                  double epsilon, double tol = 1e-10) {
  if (!(epsilon > 0.0)) throw std::domain_error("direct_map_small: epsilon must be positive");
  detail::MmDense dense(p);
  const Index n = p.a.cols();
  MmIterate cur;
  cur.x = VectorXd::Zero(n);
  cur.xi = VectorXd::Zero(n);
  cur.objective = f_eps(cur.x, cur.xi, p, lambda, alpha, epsilon);
  double change = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 500; ++k) {
    auto [x, xi] = dense.solve_step(cur.xi, lambda, alpha, epsilon);
    double obj = f_eps(x, xi, p, lambda, alpha, epsilon);
    change = std::abs(obj - cur.objective) / std::max(std::abs(cur.objective), 1e-300);
    cur.x = std::move(x);
    cur.xi = std::move(xi);
    cur.objective = obj;
    if (change < tol) return cur;
  }
  throw ConvergenceError("direct_map_small: no convergence in 500 steps; last relative change " +
                         std::to_string(change));
}

}  // namespace sdkrylov
