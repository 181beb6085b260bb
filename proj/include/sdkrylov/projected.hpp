// projected.hpp: the small least-squares problem in process coordinates,
//   min_f ||M f - beta1 e1||^2 + lambda^2 ||f||^2 + alpha^2 ||RW f||^2,
// its residual and influence trace, and lifting back to solution space.
#pragma once

#include <sdkrylov/fggk.hpp>

namespace sdkrylov {

struct ProjectedSystem {
  MatrixXd M;   // (k+1) x k upper Hessenberg
  MatrixXd RW;  // k x k upper triangular
  double beta1 = 0.0;
  Index k = 0;
  Index m_obs = 0;  // observation count of the outer problem
};

inline ProjectedSystem make_projected_system(const FggkProcess& st) {
  ProjectedSystem sys;
  sys.M = st.M;
  sys.RW = st.RW;
  sys.beta1 = st.beta1;
  sys.k = st.k;
  sys.m_obs = st.n_rows();
  return sys;
}

namespace detail {
inline MatrixXd stack_rows(const ProjectedSystem& sys, double lambda, double alpha) {
  const Index k = sys.k;
  Index rows = sys.M.rows() + (lambda > 0.0 ? k : 0) + (alpha > 0.0 ? k : 0);
  MatrixXd s = MatrixXd::Zero(rows, k);
  s.topRows(sys.M.rows()) = sys.M;
  Index at = sys.M.rows();
  if (lambda > 0.0) {
    s.block(at, 0, k, k) = lambda * MatrixXd::Identity(k, k);
    at += k;
  }
  if (alpha > 0.0) s.block(at, 0, k, k) = alpha * sys.RW;
  return s;
}

inline void check_projected_rank(const Eigen::ColPivHouseholderQR<MatrixXd>& qr, Index k) {
  MatrixXd r = qr.matrixR().topLeftCorner(k, k);
  double dmax = r.diagonal().cwiseAbs().maxCoeff();
  double dmin = r.diagonal().cwiseAbs().minCoeff();
  if (dmax == 0.0 || dmin <= 1e-14 * dmax)
    throw RankDeficiencyError(
        "projected system is numerically singular at lambda = alpha = 0; pass nonzero "
        "regularization parameters");
}
}  // namespace detail

// Stacked-rows least squares, never normal equations.
inline VectorXd solve_projected(const ProjectedSystem& sys, double lambda, double alpha) {
  if (sys.k < 1) throw DimensionError("solve_projected: empty system");
  if (!(lambda >= 0.0) || !(alpha >= 0.0))
    throw std::domain_error("solve_projected: parameters must be nonnegative");
  MatrixXd s = detail::stack_rows(sys, lambda, alpha);
  VectorXd rhs = VectorXd::Zero(s.rows());
  rhs[0] = sys.beta1;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(s);
  if (lambda == 0.0 && alpha == 0.0) detail::check_projected_rank(qr, sys.k);
  return qr.solve(rhs);
}

inline VectorXd projected_residual(const ProjectedSystem& sys, const VectorXd& f) {
  detail::check_length("projected_residual", "f", sys.k, f.size());
  VectorXd r = sys.M * f;
  r[0] -= sys.beta1;
  return r;
}

// tr(M C) with C = (M'M + lambda^2 I + alpha^2 RW'RW)^{-1} M', computed from
// the same stacked QR factor: the trace equals ||(M P) Rfac^{-1}||_F^2.
inline double influence_trace(const ProjectedSystem& sys, double lambda, double alpha) {
  if (sys.k < 1) throw DimensionError("influence_trace: empty system");
  MatrixXd s = detail::stack_rows(sys, lambda, alpha);
  Eigen::ColPivHouseholderQR<MatrixXd> qr(s);
  if (lambda == 0.0 && alpha == 0.0) detail::check_projected_rank(qr, sys.k);
  MatrixXd r = qr.matrixR().topLeftCorner(sys.k, sys.k).triangularView<Eigen::Upper>();
  MatrixXd mp = sys.M * qr.colsPermutation();
  MatrixXd x = r.triangularView<Eigen::Upper>().transpose().solve(mp.transpose());
  return x.squaredNorm();
}

struct LiftedSolution {
  VectorXd s1, s2, s;
};

// s1 = mu1 + Q V f, s2 = mu2 + W f. smooth_only keeps only the smooth part
// (s2 identically zero); sparse_only keeps only the sparse part.
inline LiftedSolution lift_solution(const FggkProcess& st, const VectorXd& f, const VectorXd& mu1,
                                    const VectorXd& mu2, const SpdMap& q) {
  detail::check_length("lift_solution", "f", st.k, f.size());
  const Index n = st.n_cols();
  detail::check_length("lift_solution", "mu1", n, mu1.size());
  detail::check_length("lift_solution", "mu2", n, mu2.size());
  LiftedSolution out;
  switch (st.mode) {
    case FggkMode::smooth_and_sparse:
      out.s1 = mu1 + q.apply(st.V * f);
      out.s2 = mu2 + st.W * f;
      out.s = out.s1 + out.s2;
      break;
    case FggkMode::smooth_only:
      out.s1 = mu1 + q.apply(st.V * f);
      out.s2 = VectorXd::Zero(n);
      out.s = out.s1;
      break;
    case FggkMode::sparse_only:
      out.s1 = VectorXd::Zero(n);
      out.s2 = mu2 + st.W * f;
      out.s = out.s2;
      break;
  }
  return out;
}

namespace detail {
// Lift through the cached Q v_j columns: algebraically identical to
// lift_solution but free of operator applications, so solver loops keep
// their per-iteration operator budget. Accepts f of length j <= k, lifting
// the iterate of an earlier step through the first j basis columns.
inline LiftedSolution lift_cached(const FggkProcess& st, const VectorXd& f, const VectorXd& mu1,
                                  const VectorXd& mu2) {
  const Index j = f.size();
  if (j > st.k)
    throw DimensionError("lift_cached: f has length " + std::to_string(j) + ", expected at most " +
                         std::to_string(st.k));
  const Index n = st.n_cols();
  LiftedSolution out;
  switch (st.mode) {
    case FggkMode::smooth_and_sparse:
      out.s1 = mu1 + st.QV.leftCols(j) * f;
      out.s2 = mu2 + st.W.leftCols(j) * f;
      out.s = out.s1 + out.s2;
      break;
    case FggkMode::smooth_only:
      out.s1 = mu1 + st.QV.leftCols(j) * f;
      out.s2 = VectorXd::Zero(n);
      out.s = out.s1;
      break;
    case FggkMode::sparse_only:
      out.s1 = VectorXd::Zero(n);
      out.s2 = mu2 + st.W.leftCols(j) * f;
      out.s = out.s2;
      break;
  }
  return out;
}
}  // namespace detail

}  // namespace sdkrylov
