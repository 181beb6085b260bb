// core.hpp: matrix-free linear operator wrappers with call accounting,
// weighted inner products, and Kronecker application.
#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

namespace sdkrylov {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DefinitenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RankDeficiencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SelectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void check_length(const char* op, const char* arg, Index expected, Index got) {
  if (expected != got)
    throw DimensionError(std::string(op) + ": " + arg + " has length " + std::to_string(got) +
                         ", expected " + std::to_string(expected));
}
}  // namespace detail

// Counters are shared between copies of an operator so that accounting
// survives pass-by-value. Atomics keep concurrent application safe.
struct LinearCounts {
  std::atomic<long> forward{0};
  std::atomic<long> adjoint{0};
};

struct SpdCounts {
  std::atomic<long> apply{0};
  std::atomic<long> inverse{0};
  std::atomic<long> sqrt{0};
};

// A (possibly rectangular) linear operator given by its forward and adjoint
// actions. No matrix is stored unless the factory captured one.
class LinearMap {
 public:
  using Fn = std::function<VectorXd(const VectorXd&)>;

  LinearMap(Index rows, Index cols, Fn fwd, Fn adj)
      : rows_(rows),
        cols_(cols),
        fwd_(std::move(fwd)),
        adj_(std::move(adj)),
        counts_(std::make_shared<LinearCounts>()) {
    if (rows_ <= 0 || cols_ <= 0) throw DimensionError("LinearMap: sizes must be positive");
  }

  static LinearMap dense(MatrixXd a) {
    auto m = std::make_shared<MatrixXd>(std::move(a));
    return LinearMap(
        m->rows(), m->cols(), [m](const VectorXd& x) -> VectorXd { return (*m) * x; },
        [m](const VectorXd& y) -> VectorXd { return m->transpose() * y; });
  }

  static LinearMap identity(Index n) {
    auto pass = [](const VectorXd& x) -> VectorXd { return x; };
    return LinearMap(n, n, pass, pass);
  }

  VectorXd forward(const VectorXd& x) const {
    detail::check_length("LinearMap::forward", "x", cols_, x.size());
    counts_->forward.fetch_add(1, std::memory_order_relaxed);
    VectorXd y = fwd_(x);
    detail::check_length("LinearMap::forward", "result", rows_, y.size());
    return y;
  }

  VectorXd adjoint(const VectorXd& y) const {
    detail::check_length("LinearMap::adjoint", "y", rows_, y.size());
    counts_->adjoint.fetch_add(1, std::memory_order_relaxed);
    VectorXd x = adj_(y);
    detail::check_length("LinearMap::adjoint", "result", cols_, x.size());
    return x;
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  long forward_count() const { return counts_->forward.load(); }
  long adjoint_count() const { return counts_->adjoint.load(); }
  void reset_counts() const {
    counts_->forward.store(0);
    counts_->adjoint.store(0);
  }

 private:
  Index rows_, cols_;
  Fn fwd_, adj_;
  std::shared_ptr<LinearCounts> counts_;
};

// Symmetric positive definite operator. Inverse and square-root actions are
// optional capabilities; callers probe before use.
class SpdMap {
 public:
  using Fn = std::function<VectorXd(const VectorXd&)>;

  SpdMap(Index n, Fn apply, Fn inverse = nullptr, Fn sqrt = nullptr)
      : n_(n),
        apply_(std::move(apply)),
        inverse_(std::move(inverse)),
        sqrt_(std::move(sqrt)),
        counts_(std::make_shared<SpdCounts>()) {
    if (n_ <= 0) throw DimensionError("SpdMap: dimension must be positive");
  }

  static SpdMap identity(Index n) {
    auto pass = [](const VectorXd& x) -> VectorXd { return x; };
    return SpdMap(n, pass, pass, pass);
  }

  // Dense SPD matrix with Cholesky-backed inverse and square root.
  // The factorization is computed once, eagerly, so definiteness problems
  // surface at construction.
  static SpdMap dense(MatrixXd m) {
    if (m.rows() != m.cols()) throw DimensionError("SpdMap::dense: matrix must be square");
    auto mat = std::make_shared<MatrixXd>(std::move(m));
    auto llt = std::make_shared<Eigen::LLT<MatrixXd>>(*mat);
    if (llt->info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(*mat, Eigen::EigenvaluesOnly);
      throw DefinitenessError("SpdMap::dense: Cholesky failed, smallest eigenvalue estimate " +
                              std::to_string(es.eigenvalues().minCoeff()));
    }
    return SpdMap(
        mat->rows(), [mat](const VectorXd& x) -> VectorXd { return (*mat) * x; },
        [llt](const VectorXd& x) -> VectorXd { return llt->solve(x); },
        [llt](const VectorXd& x) -> VectorXd { return llt->matrixL() * x; });
  }

  VectorXd apply(const VectorXd& x) const {
    detail::check_length("SpdMap::apply", "x", n_, x.size());
    auto& slot = charge_apply_as_inverse_ ? counts_->inverse : counts_->apply;
    slot.fetch_add(1, std::memory_order_relaxed);
    return apply_(x);
  }

  VectorXd apply_inverse(const VectorXd& x) const {
    if (!inverse_) throw std::logic_error("SpdMap::apply_inverse: no inverse action available");
    detail::check_length("SpdMap::apply_inverse", "x", n_, x.size());
    auto& slot = charge_apply_as_inverse_ ? counts_->apply : counts_->inverse;
    slot.fetch_add(1, std::memory_order_relaxed);
    return inverse_(x);
  }

  VectorXd apply_sqrt(const VectorXd& x) const {
    if (!sqrt_) throw std::logic_error("SpdMap::apply_sqrt: no square-root action available");
    detail::check_length("SpdMap::apply_sqrt", "x", n_, x.size());
    counts_->sqrt.fetch_add(1, std::memory_order_relaxed);
    return sqrt_(x);
  }

  bool has_inverse() const { return static_cast<bool>(inverse_); }
  bool has_sqrt() const { return static_cast<bool>(sqrt_); }
  Index dim() const { return n_; }

  long apply_count() const { return counts_->apply.load(); }
  long inverse_count() const { return counts_->inverse.load(); }
  long sqrt_count() const { return counts_->sqrt.load(); }
  void reset_counts() const {
    counts_->apply.store(0);
    counts_->inverse.store(0);
    counts_->sqrt.store(0);
  }

  // View of this operator's inverse as an SpdMap. Applications of the view
  // are charged to this operator's inverse counter, so accounting follows
  // the underlying operator wherever the view travels.
  SpdMap inverse_map() const {
    if (!inverse_) throw std::logic_error("SpdMap::inverse_map: no inverse action available");
    SpdMap v(n_, inverse_, apply_, nullptr);
    v.counts_ = counts_;
    v.charge_apply_as_inverse_ = true;
    return v;
  }

 private:
  Index n_;
  Fn apply_, inverse_, sqrt_;
  std::shared_ptr<SpdCounts> counts_;
  bool charge_apply_as_inverse_ = false;
};

// diag(d) with d > 0 elementwise.
inline SpdMap diag_map(const VectorXd& d) {
  for (Index i = 0; i < d.size(); ++i)
    if (!(d[i] > 0.0))
      throw DefinitenessError("diag_map: entry " + std::to_string(i) + " is " +
                              std::to_string(d[i]) + ", all entries must be positive");
  auto dd = std::make_shared<VectorXd>(d);
  auto dinv = std::make_shared<VectorXd>(d.cwiseInverse());
  auto dsq = std::make_shared<VectorXd>(d.cwiseSqrt());
  return SpdMap(
      d.size(), [dd](const VectorXd& x) -> VectorXd { return dd->cwiseProduct(x); },
      [dinv](const VectorXd& x) -> VectorXd { return dinv->cwiseProduct(x); },
      [dsq](const VectorXd& x) -> VectorXd { return dsq->cwiseProduct(x); });
}

// blkdiag(a, b) acting on stacked vectors (x; y).
inline SpdMap blkdiag_map(const SpdMap& a, const SpdMap& b) {
  auto ap = std::make_shared<SpdMap>(a);
  auto bp = std::make_shared<SpdMap>(b);
  const Index na = a.dim(), nb = b.dim();
  auto stack = [na, nb](const VectorXd& x, auto&& fa, auto&& fb) -> VectorXd {
    VectorXd out(na + nb);
    out.head(na) = fa(x.head(na));
    out.tail(nb) = fb(x.tail(nb));
    return out;
  };
  SpdMap::Fn apply = [=](const VectorXd& x) {
    return stack(
        x, [&](const VectorXd& v) { return ap->apply(v); },
        [&](const VectorXd& v) { return bp->apply(v); });
  };
  SpdMap::Fn inverse = nullptr;
  if (a.has_inverse() && b.has_inverse())
    inverse = [=](const VectorXd& x) {
      return stack(
          x, [&](const VectorXd& v) { return ap->apply_inverse(v); },
          [&](const VectorXd& v) { return bp->apply_inverse(v); });
    };
  SpdMap::Fn sqrt = nullptr;
  if (a.has_sqrt() && b.has_sqrt())
    sqrt = [=](const VectorXd& x) {
      return stack(
          x, [&](const VectorXd& v) { return ap->apply_sqrt(v); },
          [&](const VectorXd& v) { return bp->apply_sqrt(v); });
    };
  return SpdMap(na + nb, std::move(apply), std::move(inverse), std::move(sqrt));
}

inline double weighted_inner(const VectorXd& x, const VectorXd& y, const SpdMap& w) {
  detail::check_length("weighted_inner", "x", w.dim(), x.size());
  detail::check_length("weighted_inner", "y", w.dim(), y.size());
  return x.dot(w.apply(y));
}

inline double weighted_norm(const VectorXd& x, const SpdMap& w) {
  double q = weighted_inner(x, x, w);
  if (q < 0.0) {
    double scale = x.squaredNorm();
    if (q < -1e-10 * std::max(scale, 1.0))
      throw DefinitenessError("weighted_norm: negative quadratic form " + std::to_string(q));
    q = 0.0;  // roundoff only
  }
  return std::sqrt(q);
}

// Application of qt (x) qs to a vector in spatial-fastest ordering: x holds
// the columns of a g-by-r matrix X (g spatial, r temporal) and the result is
// vec(qs * X * qt^T) in the same ordering.
inline VectorXd kron_apply(const SpdMap& qt, const SpdMap& qs, const VectorXd& x) {
  const Index r = qt.dim(), g = qs.dim();
  detail::check_length("kron_apply", "x", r * g, x.size());
  Eigen::Map<const MatrixXd> xm(x.data(), g, r);
  MatrixXd y(g, r);
  for (Index j = 0; j < r; ++j) y.col(j) = qs.apply(xm.col(j));
  MatrixXd yt = y.transpose();  // r x g
  MatrixXd zt(r, g);
  for (Index j = 0; j < g; ++j) zt.col(j) = qt.apply(yt.col(j));
  MatrixXd z = zt.transpose();
  return Eigen::Map<VectorXd>(z.data(), r * g);
}

namespace detail {
// Materialize an operator column by column. Test and oracle helper; also
// used by the dense reference solver where problem sizes stay small.
inline MatrixXd densify(const LinearMap& a) {
  MatrixXd m(a.rows(), a.cols());
  VectorXd e = VectorXd::Zero(a.cols());
  for (Index j = 0; j < a.cols(); ++j) {
    e[j] = 1.0;
    m.col(j) = a.forward(e);
    e[j] = 0.0;
  }
  return m;
}

inline MatrixXd densify(const SpdMap& q) {
  MatrixXd m(q.dim(), q.dim());
  VectorXd e = VectorXd::Zero(q.dim());
  for (Index j = 0; j < q.dim(); ++j) {
    e[j] = 1.0;
    m.col(j) = q.apply(e);
    e[j] = 0.0;
  }
  return m;
}
}  // namespace detail

}  // namespace sdkrylov
