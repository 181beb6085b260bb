// fggk.hpp: flexible generalized Golub-Kahan process for augmented
// operators [A A] acting on a smooth-plus-sparse pair, with per-iteration
// diagonal reweighting, incremental QR of the reweighted basis, and the
// alternative augmented-space recurrence.
#pragma once

#include <sdkrylov/core.hpp>

#include <optional>

namespace sdkrylov {

enum class FggkMode { smooth_and_sparse, smooth_only, sparse_only };

enum class StepStatus { ok, benign_breakdown, v_breakdown };

struct FggkOptions {
  bool reorthogonalize = true;
  double tau_break = 1e-12;
};

// Incremental thin-QR append with one reorthogonalization pass.
// Returns the residual norm beta; sets the rank flag when w_new is
// numerically inside the current span (the column is kept, its direction
// zeroed so downstream algebra stays finite).
inline double qr_update(MatrixXd& qw, MatrixXd& rw, const VectorXd& w_new, bool* rank_flag = nullptr) {
  const Index n = w_new.size();
  const Index k = qw.cols();
  if (qw.rows() != n && k > 0)
    throw DimensionError("qr_update: w_new has length " + std::to_string(n) + ", expected " +
                         std::to_string(qw.rows()));
  VectorXd r = VectorXd::Zero(k);
  VectorXd h = w_new;
  for (int pass = 0; pass < 2; ++pass) {
    for (Index j = 0; j < k; ++j) {
      double tau = qw.col(j).dot(h);
      h -= tau * qw.col(j);
      r[j] += tau;
    }
  }
  double beta = h.norm();
  bool deficient = beta <= 1e-12 * w_new.norm();
  if (rank_flag) *rank_flag = *rank_flag || deficient;

  MatrixXd qw2(n, k + 1), rw2 = MatrixXd::Zero(k + 1, k + 1);
  qw2.leftCols(k) = qw;
  rw2.topLeftCorner(k, k) = rw;
  rw2.block(0, k, k, 1) = r;
  rw2(k, k) = beta;
  qw2.col(k) = (beta > 0.0) ? VectorXd(h / beta) : VectorXd::Zero(n);
  qw = std::move(qw2);
  rw = std::move(rw2);
  return beta;
}

// The process state after k completed steps:
//   U  m x (k+1) with U' R^{-1} U = I, V n x k with V' Q V = I,
//   W  n x k holding w_j = D_j^{-1} v_j, thin QR factors W = QW RW,
//   M  (k+1) x k and T k x k such that
//     [A A] blkdiag(Q, I) [V; W] = U M   and   A' R^{-1} U_k = V_k T_k.
// RinvU and QV cache R^{-1} u_j and Q v_j so Gram-Schmidt sweeps and
// solution lifting never trigger additional operator applications.
class FggkProcess {
 public:
  FggkMode mode = FggkMode::smooth_and_sparse;
  FggkOptions opts;
  MatrixXd U, RinvU;  // m x (k+1)
  MatrixXd V, QV;     // n x k
  MatrixXd W, QW;     // n x k
  MatrixXd RW;        // k x k
  MatrixXd M;         // (k+1) x k
  MatrixXd T;         // k x k
  double beta1 = 0.0;
  Index k = 0;
  bool rank_deficient_w = false;
  bool finished = false;

  FggkProcess(const LinearMap& a, const SpdMap& rinv, const SpdMap& q, const VectorXd& c,
              FggkMode mode_ = FggkMode::smooth_and_sparse, FggkOptions opts_ = {})
      : mode(mode_), opts(opts_), a_(a), rinv_(rinv), q_(q) {
    detail::check_length("fggk_init", "c", a.rows(), c.size());
    if (rinv.dim() != a.rows())
      throw DimensionError("fggk_init: Rinv dimension " + std::to_string(rinv.dim()) +
                           ", expected " + std::to_string(a.rows()));
    if (q.dim() != a.cols())
      throw DimensionError("fggk_init: Q dimension " + std::to_string(q.dim()) + ", expected " +
                           std::to_string(a.cols()));
    if (c.norm() == 0.0)
      throw std::invalid_argument("fggk_init: c is zero, nothing to solve");
    const Index m = a.rows(), n = a.cols();
    VectorXd rc = rinv_->apply(c);
    beta1 = std::sqrt(c.dot(rc));
    U.resize(m, 1);
    RinvU.resize(m, 1);
    U.col(0) = c / beta1;
    RinvU.col(0) = rc / beta1;
    V.resize(n, 0);
    QV.resize(n, 0);
    W.resize(n, 0);
    QW.resize(n, 0);
    RW.resize(0, 0);
    M.resize(1, 0);
    T.resize(0, 0);
  }

  // Minimal state for tests that exercise lifting only.
  static FggkProcess synthetic(MatrixXd v, MatrixXd qv, MatrixXd w,
                               FggkMode mode_ = FggkMode::smooth_and_sparse) {
    FggkProcess p;
    p.mode = mode_;
    p.k = v.cols();
    p.V = std::move(v);
    p.QV = std::move(qv);
    p.W = std::move(w);
    return p;
  }

  Index n_rows() const { return U.rows(); }
  Index n_cols() const { return V.rows(); }

  // One expansion step with the current reweighting D_k^{-1}. Exactly one
  // forward and one adjoint of A, two applications of Q (one inside the
  // v-normalization, one for the cached Q v_k), one of R^{-1} and one of
  // D_k^{-1} in smooth_and_sparse mode.
  StepStatus step(const SpdMap& dk_inv) {
    if (finished) throw std::logic_error("fggk_step: process already finalized");
    if (!a_) throw std::logic_error("fggk_step: synthetic state cannot step");
    const Index n = a_->cols();
    if (mode != FggkMode::smooth_only)
      detail::check_length("fggk_step", "Dk_inv", n, dk_inv.dim());

    // (a) new v_k from the latest u, Gram-Schmidt in the Q inner product
    VectorXd h = a_->adjoint(RinvU.col(k));
    VectorXd tcol = VectorXd::Zero(k);
    const int passes = opts.reorthogonalize ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
      for (Index j = 0; j < k; ++j) {
        double tau = QV.col(j).dot(h);
        h -= tau * V.col(j);
        tcol[j] += tau;
      }
    }
    VectorXd qh = (mode == FggkMode::sparse_only) ? h : q_->apply(h);
    double q_form = h.dot(qh);
    double tkk = q_form > 0.0 ? std::sqrt(q_form) : 0.0;
    if (tkk <= opts.tau_break) {
      finished = true;
      return StepStatus::v_breakdown;
    }
    VectorXd vk = h / tkk;

    // (b) reweighted direction
    VectorXd wk;
    if (mode == FggkMode::smooth_only)
      wk = VectorXd::Zero(n);
    else
      wk = dk_inv.apply(vk);

    // (c) expansion and Gram-Schmidt in the R^{-1} inner product
    VectorXd qvk = (mode == FggkMode::sparse_only) ? vk : q_->apply(vk);
    VectorXd expand;
    switch (mode) {
      case FggkMode::smooth_and_sparse:
        expand = qvk + wk;
        break;
      case FggkMode::smooth_only:
        expand = qvk;
        break;
      case FggkMode::sparse_only:
        expand = wk;
        break;
    }
    VectorXd h2 = a_->forward(expand);
    VectorXd mcol = VectorXd::Zero(k + 1);
    for (int pass = 0; pass < passes; ++pass) {
      for (Index j = 0; j < k + 1; ++j) {
        double tau = RinvU.col(j).dot(h2);
        h2 -= tau * U.col(j);
        mcol[j] += tau;
      }
    }
    VectorXd rh2 = rinv_->apply(h2);
    double r_form = h2.dot(rh2);
    double mk1 = r_form > 0.0 ? std::sqrt(r_form) : 0.0;

    // commit the step
    append_col(V, vk);
    append_col(QV, qvk);
    append_col(W, wk);
    grow_T(tcol, tkk);
    grow_M(mcol, mk1);
    if (mode == FggkMode::smooth_only) {
      append_col(QW, VectorXd::Zero(n));
      MatrixXd rw2 = MatrixXd::Zero(k + 1, k + 1);
      rw2.topLeftCorner(k, k) = RW;
      RW = std::move(rw2);
    } else {
      qr_update(QW, RW, wk, &rank_deficient_w);
    }
    ++k;

    if (mk1 <= opts.tau_break * beta1) {
      finished = true;
      return StepStatus::benign_breakdown;
    }
    append_col(U, h2 / mk1);
    append_col(RinvU, rh2 / mk1);
    return StepStatus::ok;
  }

 private:
  FggkProcess() = default;

  std::optional<LinearMap> a_;
  std::optional<SpdMap> rinv_, q_;

  static void append_col(MatrixXd& m, const VectorXd& col) {
    m.conservativeResize(col.size(), m.cols() + 1);
    m.col(m.cols() - 1) = col;
  }

  void grow_T(const VectorXd& tcol, double tkk) {
    MatrixXd t2 = MatrixXd::Zero(k + 1, k + 1);
    t2.topLeftCorner(k, k) = T;
    t2.block(0, k, k, 1) = tcol;
    t2(k, k) = tkk;
    T = std::move(t2);
  }

  void grow_M(const VectorXd& mcol, double mk1) {
    MatrixXd m2 = MatrixXd::Zero(k + 2, k + 1);
    m2.topLeftCorner(k + 1, k) = M;
    m2.block(0, k, k + 1, 1) = mcol;
    m2(k + 1, k) = mk1;
    M = std::move(m2);
  }
};

inline FggkProcess fggk_init(const LinearMap& a, const SpdMap& rinv, const SpdMap& q,
                             const VectorXd& c, FggkMode mode = FggkMode::smooth_and_sparse,
                             FggkOptions opts = {}) {
  return FggkProcess(a, rinv, q, c, mode, opts);
}

inline StepStatus fggk_step(FggkProcess& state, const SpdMap& dk_inv) { return state.step(dk_inv); }

// Monomial Krylov basis [c, Ec, ..., E^{k-1}c] with E = A (Q + Dhat^{-1}) A' R^{-1}.
// Subspace-equality testing aid: with a fixed reweighting the process spans
// exactly this space.
inline MatrixXd fixed_d_krylov_basis(const LinearMap& a, const SpdMap& rinv, const SpdMap& q,
                                     const SpdMap& dhat_inv, const VectorXd& c, Index k) {
  detail::check_length("fixed_d_krylov_basis", "c", a.rows(), c.size());
  if (k < 1) throw DimensionError("fixed_d_krylov_basis: k must be at least 1");
  MatrixXd basis(c.size(), k);
  basis.col(0) = c;
  for (Index j = 1; j < k; ++j) {
    VectorXd t = a.adjoint(rinv.apply(basis.col(j - 1)));
    basis.col(j) = a.forward(q.apply(t) + dhat_inv.apply(t));
  }
  return basis;
}

// Alternative recurrence working in the stacked space R^{2n}: basis vectors
// v_j are blkdiag(Q, I)-orthonormal, z_j = blkdiag(I, D_j^{-1}) v_j, and the
// factors satisfy [A A] blkdiag(Q, I) Z_k = U_{k+1} G_k and
// A_hat' R^{-1} U_k = V_k H_k.
class FggkAltProcess {
 public:
  FggkOptions opts;
  MatrixXd U, RinvU;   // m x (k+1)
  MatrixXd V, QhatV;   // 2n x k
  MatrixXd Z;          // 2n x k, z_j = L_j v_j
  MatrixXd G;          // (k+1) x k
  MatrixXd H;          // k x k
  double beta1 = 0.0;
  Index k = 0;
  bool finished = false;

  FggkAltProcess(const LinearMap& a, const SpdMap& rinv, const SpdMap& q, const VectorXd& c,
                 FggkOptions opts_ = {})
      : opts(opts_), a_(a), rinv_(rinv), q_(q) {
    detail::check_length("fggk_alt_init", "c", a.rows(), c.size());
    if (c.norm() == 0.0) throw std::invalid_argument("fggk_alt_init: c is zero, nothing to solve");
    const Index m = a.rows(), n2 = 2 * a.cols();
    VectorXd rc = rinv_->apply(c);
    beta1 = std::sqrt(c.dot(rc));
    U.resize(m, 1);
    RinvU.resize(m, 1);
    U.col(0) = c / beta1;
    RinvU.col(0) = rc / beta1;
    V.resize(n2, 0);
    QhatV.resize(n2, 0);
    Z.resize(n2, 0);
    G.resize(1, 0);
    H.resize(0, 0);
  }

  StepStatus step(const SpdMap& dk_inv) {
    if (finished) throw std::logic_error("fggk_alt_step: process already finalized");
    const Index n = a_->cols();
    detail::check_length("fggk_alt_step", "Dk_inv", n, dk_inv.dim());

    // (a) h = A_hat' R^{-1} u_k: both blocks carry A' R^{-1} u_k
    VectorXd top = a_->adjoint(RinvU.col(k));
    VectorXd h(2 * n);
    h << top, top;
    VectorXd hcol = VectorXd::Zero(k);
    const int passes = opts.reorthogonalize ? 2 : 1;
    for (int pass = 0; pass < passes; ++pass) {
      for (Index j = 0; j < k; ++j) {
        double tau = QhatV.col(j).dot(h);
        h -= tau * V.col(j);
        hcol[j] += tau;
      }
    }
    VectorXd qh(2 * n);
    qh << q_->apply(h.head(n)), h.tail(n);
    double q_form = h.dot(qh);
    double hkk = q_form > 0.0 ? std::sqrt(q_form) : 0.0;
    if (hkk <= opts.tau_break) {
      finished = true;
      return StepStatus::v_breakdown;
    }
    VectorXd vk = h / hkk;
    VectorXd qvk = qh / hkk;

    // (b) z_k = blkdiag(I, D_k^{-1}) v_k
    VectorXd zk(2 * n);
    zk << vk.head(n), dk_inv.apply(vk.tail(n));

    // (c) expansion A_hat Qhat z_k = A (Q z_top + z_bot)
    VectorXd h2 = a_->forward(q_->apply(zk.head(n)) + zk.tail(n));
    VectorXd gcol = VectorXd::Zero(k + 1);
    for (int pass = 0; pass < passes; ++pass) {
      for (Index j = 0; j < k + 1; ++j) {
        double tau = RinvU.col(j).dot(h2);
        h2 -= tau * U.col(j);
        gcol[j] += tau;
      }
    }
    VectorXd rh2 = rinv_->apply(h2);
    double r_form = h2.dot(rh2);
    double gk1 = r_form > 0.0 ? std::sqrt(r_form) : 0.0;

    append_col(V, vk);
    append_col(QhatV, qvk);
    append_col(Z, zk);
    grow_upper(H, hcol, hkk);
    grow_hess(G, gcol, gk1);
    ++k;

    if (gk1 <= opts.tau_break * beta1) {
      finished = true;
      return StepStatus::benign_breakdown;
    }
    append_col(U, h2 / gk1);
    append_col(RinvU, rh2 / gk1);
    return StepStatus::ok;
  }

 private:
  std::optional<LinearMap> a_;
  std::optional<SpdMap> rinv_, q_;

  static void append_col(MatrixXd& m, const VectorXd& col) {
    m.conservativeResize(col.size(), m.cols() + 1);
    m.col(m.cols() - 1) = col;
  }
  void grow_upper(MatrixXd& t, const VectorXd& col, double diag) {
    MatrixXd t2 = MatrixXd::Zero(k + 1, k + 1);
    t2.topLeftCorner(k, k) = t;
    t2.block(0, k, k, 1) = col;
    t2(k, k) = diag;
    t = std::move(t2);
  }
  void grow_hess(MatrixXd& g, const VectorXd& col, double sub) {
    MatrixXd g2 = MatrixXd::Zero(k + 2, k + 1);
    g2.topLeftCorner(k + 1, k) = g;
    g2.block(0, k, k + 1, 1) = col;
    g2(k + 1, k) = sub;
    g = std::move(g2);
  }
};

inline FggkAltProcess fggk_alt_init(const LinearMap& a, const SpdMap& rinv, const SpdMap& q,
                                    const VectorXd& c, FggkOptions opts = {}) {
  return FggkAltProcess(a, rinv, q, c, opts);
}

inline StepStatus fggk_alt_step(FggkAltProcess& state, const SpdMap& dk_inv) {
  return state.step(dk_inv);
}

}  // namespace sdkrylov
