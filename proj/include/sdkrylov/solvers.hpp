#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdkrylov/fggk.hpp"
#include "sdkrylov/projected.hpp"
#include "sdkrylov/regparam.hpp"

namespace sdkrylov {

// Data, forward operator, covariances, and component means of one instance
// of the two-component reconstruction problem.
struct InverseProblem {
  LinearMap a;
  SpdMap r;  // noise covariance; must provide an inverse action
  SpdMap q;  // smooth-component prior covariance
  VectorXd d;
  VectorXd mu1, mu2;

  InverseProblem(LinearMap a_, SpdMap r_, SpdMap q_, VectorXd d_)
      : InverseProblem(std::move(a_), std::move(r_), std::move(q_), std::move(d_),
                       VectorXd::Zero(0), VectorXd::Zero(0)) {}

  InverseProblem(LinearMap a_, SpdMap r_, SpdMap q_, VectorXd d_, VectorXd mu1_, VectorXd mu2_)
      : a(std::move(a_)),
        r(std::move(r_)),
        q(std::move(q_)),
        d(std::move(d_)),
        mu1(std::move(mu1_)),
        mu2(std::move(mu2_)) {
    if (mu1.size() == 0) mu1 = VectorXd::Zero(a.cols());
    if (mu2.size() == 0) mu2 = VectorXd::Zero(a.cols());
    if (r.dim() != a.rows())
      throw DimensionError("InverseProblem: R dimension " + std::to_string(r.dim()) +
                           ", expected " + std::to_string(a.rows()));
    if (q.dim() != a.cols())
      throw DimensionError("InverseProblem: Q dimension " + std::to_string(q.dim()) +
                           ", expected " + std::to_string(a.cols()));
    detail::check_length("InverseProblem", "d", a.rows(), d.size());
    detail::check_length("InverseProblem", "mu1", a.cols(), mu1.size());
    detail::check_length("InverseProblem", "mu2", a.cols(), mu2.size());
    if (!r.has_inverse()) throw ConfigError("InverseProblem: R must provide an inverse action");
  }
};

struct SolveOptions {
  int max_iter = 50;
  double epsilon = 1e-6;  // smoothing of the sparsity penalty
  SelectionRule rule = SelectionRule::wgcv();
  StoppingPolicy stopping;  // its max_iter is superseded by the field above
  bool reorthogonalize = true;
  FggkMode mode = FggkMode::smooth_and_sparse;  // used by the generic solve()
  double tau_break = 1e-12;
};

struct IterationRecord {
  int k = 0;
  double lambda = 0.0;
  double alpha = 0.0;
  double gcv = 0.0;
  double res_norm = 0.0;
  std::optional<double> rel_err;  // vs truth, when the rule carries one
};

// Operator applications performed by the iteration loop (initialization and
// data preprocessing excluded), for auditing against the per-step budget.
struct OpCounts {
  long a_forward = 0;
  long a_adjoint = 0;
  long q_apply = 0;
  long r_inverse = 0;
  long d_inverse = 0;
};

struct SolveResult {
  VectorXd s1, s2, s;  // s = s1 + s2 by construction
  std::vector<IterationRecord> history;
  std::string stop_reason;
  double wall_time = 0.0;
  OpCounts op_counts;
  int chosen_k = 0;  // iteration index the returned solution was lifted from
};

// Diagonal majorization weights D(xi) = diag((2 sqrt(xi_i^2 + eps))^{-1/2}).
inline SpdMap weight_matrix(const VectorXd& xi, double epsilon) {
  if (!(epsilon > 0.0)) throw std::domain_error("weight_matrix: epsilon must be positive");
  VectorXd w(xi.size());
  for (Index i = 0; i < xi.size(); ++i)
    w[i] = 1.0 / std::sqrt(2.0 * std::sqrt(xi[i] * xi[i] + epsilon));
  return diag_map(w);
}

namespace detail {

struct DriverSpec {
  FggkMode mode = FggkMode::smooth_and_sparse;
  bool select_lambda = true;
  bool select_alpha = true;
  bool update_weights = true;
};

// Objective of the configured rule as a function of (lambda, alpha). The
// truth-based rule lifts through the process caches so that selection costs
// no operator applications.
inline std::function<double(double, double)> rule_objective(const ProjectedSystem& sys,
                                                            const SelectionRule& rule,
                                                            const FggkProcess& st,
                                                            const VectorXd& mu1,
                                                            const VectorXd& mu2) {
  using Kind = SelectionRule::Kind;
  switch (rule.kind) {
    case Kind::upre:
      return [&sys](double l, double a) { return upre_objective(sys, l, a); };
    case Kind::dp:
      return [&sys, tau = rule.tau](double l, double a) { return dp_objective(sys, l, a, tau); };
    case Kind::wgcv:
      return [&sys](double l, double a) { return wgcv_objective(sys, l, a); };
    case Kind::optimal: {
      if (!rule.truth) throw ConfigError("rule_objective: optimal rule without truth");
      const VectorXd& truth = *rule.truth;
      check_length("rule_objective", "truth", st.n_cols(), truth.size());
      return [&sys, &st, &mu1, &mu2, &truth](double l, double a) {
        VectorXd f = solve_projected(sys, l, a);
        return (lift_cached(st, f, mu1, mu2).s - truth).squaredNorm();
      };
    }
    default:
      throw ConfigError("rule_objective: rule has no searchable objective");
  }
}

// One parameter pair for the current projected system, pinning coordinates
// the caller's model does not regularize.
inline std::pair<double, double> select_for_driver(const ProjectedSystem& sys,
                                                   const SelectionRule& rule,
                                                   const FggkProcess& st, const VectorXd& mu1,
                                                   const VectorXd& mu2, const DriverSpec& ds) {
  if (rule.kind == SelectionRule::Kind::fixed) {
    if (!rule.fixed_values) throw ConfigError("select_for_driver: fixed rule without values");
    return {ds.select_lambda ? rule.fixed_values->first : 0.0,
            ds.select_alpha ? rule.fixed_values->second : 0.0};
  }
  auto obj = rule_objective(sys, rule, st, mu1, mu2);
  auto pinned = [&obj, &ds](double l, double a) {
    return obj(ds.select_lambda ? l : 0.0, ds.select_alpha ? a : 0.0);
  };
  SearchResult r = search_log_params(pinned);
  return {ds.select_lambda ? r.lambda : 0.0, ds.select_alpha ? r.alpha : 0.0};
}

// The stopping indicator degenerates when the influence trace reaches the
// iteration count (interpolation regime); treat that as an infinite value so
// the stopping rules simply never fire on it.
inline double safe_gcv(const ProjectedSystem& sys, double lambda, double alpha) {
  try {
    return gcv_stop_value(sys, lambda, alpha);
  } catch (const SelectionError&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline SolveResult means_only_result(const InverseProblem& p, const DriverSpec& ds,
                                     std::string reason) {
  const Index n = p.a.cols();
  SolveResult out;
  switch (ds.mode) {
    case FggkMode::smooth_and_sparse:
      out.s1 = p.mu1;
      out.s2 = p.mu2;
      break;
    case FggkMode::smooth_only:
      out.s1 = p.mu1;
      out.s2 = VectorXd::Zero(n);
      break;
    case FggkMode::sparse_only:
      out.s1 = VectorXd::Zero(n);
      out.s2 = p.mu2;
      break;
  }
  out.s = out.s1 + out.s2;
  out.stop_reason = std::move(reason);
  return out;
}

inline SolveResult run_fggk_driver(const InverseProblem& p, const SolveOptions& opts,
                                   const DriverSpec& ds) {
  auto t0 = std::chrono::steady_clock::now();
  const Index n = p.a.cols();

  // Change of variables: remove the modeled means from the data once.
  VectorXd c = p.d;
  switch (ds.mode) {
    case FggkMode::smooth_and_sparse:
      if (!p.mu1.isZero(0.0) || !p.mu2.isZero(0.0)) c -= p.a.forward(p.mu1 + p.mu2);
      break;
    case FggkMode::smooth_only:
      if (!p.mu1.isZero(0.0)) c -= p.a.forward(p.mu1);
      break;
    case FggkMode::sparse_only:
      if (!p.mu2.isZero(0.0)) c -= p.a.forward(p.mu2);
      break;
  }
  if (c.norm() == 0.0) return means_only_result(p, ds, "zero_residual");

  FggkOptions fopts;
  fopts.reorthogonalize = opts.reorthogonalize;
  fopts.tau_break = opts.tau_break;
  FggkProcess st(p.a, p.r.inverse_map(), p.q, c, ds.mode, fopts);

  // Count only the iteration loop: initialization (one R^{-1}) and the mean
  // shift above are excluded from the per-step budget.
  const long base_af = p.a.forward_count(), base_aa = p.a.adjoint_count();
  const long base_q = p.q.apply_count(), base_r = p.r.inverse_count();

  SolveResult out;
  StoppingPolicy pol = opts.stopping;
  pol.max_iter = opts.max_iter;

  std::vector<VectorXd> iterates;
  std::vector<double> gvals;
  VectorXd xi = VectorXd::Zero(n);
  bool have_xi = false;
  int chosen = 0;

  for (int k = 1; k <= opts.max_iter; ++k) {
    SpdMap dmap = have_xi ? weight_matrix(xi, opts.epsilon) : SpdMap::identity(n);
    SpdMap dinv = dmap.inverse_map();
    StepStatus status = st.step(dinv);
    out.op_counts.d_inverse += dmap.inverse_count();
    if (status == StepStatus::v_breakdown) {
      out.stop_reason = "v_breakdown";
      chosen = k - 1;
      break;
    }

    ProjectedSystem sys = make_projected_system(st);
    auto [lambda, alpha] = select_for_driver(sys, opts.rule, st, p.mu1, p.mu2, ds);
    VectorXd f = solve_projected(sys, lambda, alpha);
    double gval = safe_gcv(sys, lambda, alpha);

    IterationRecord rec;
    rec.k = k;
    rec.lambda = lambda;
    rec.alpha = alpha;
    rec.gcv = gval;
    rec.res_norm = projected_residual(sys, f).norm();
    if (opts.rule.truth) {
      LiftedSolution lifted = detail::lift_cached(st, f, p.mu1, p.mu2);
      rec.rel_err = (lifted.s - *opts.rule.truth).norm() / opts.rule.truth->norm();
    }
    out.history.push_back(rec);
    iterates.push_back(f);
    gvals.push_back(gval);

    if (ds.update_weights && st.W.cols() > 0) {
      xi = st.W * f;
      have_xi = true;
    }

    if (status == StepStatus::benign_breakdown) {
      out.stop_reason = "benign_breakdown";
      chosen = k;
      break;
    }
    StopDecision dec = check_stopping(gvals, pol);
    if (dec.stop) {
      out.stop_reason = dec.reason;
      chosen = dec.reason == "min_passed" ? dec.best_index + 1 : k;
      break;
    }
  }

  out.op_counts.a_forward = p.a.forward_count() - base_af;
  out.op_counts.a_adjoint = p.a.adjoint_count() - base_aa;
  out.op_counts.q_apply = p.q.apply_count() - base_q;
  out.op_counts.r_inverse = p.r.inverse_count() - base_r;

  if (chosen < 1) {
    SolveResult empty = means_only_result(p, ds, out.stop_reason);
    empty.op_counts = out.op_counts;
    empty.history = out.history;
    empty.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return empty;
  }
  LiftedSolution lifted = detail::lift_cached(st, iterates[chosen - 1], p.mu1, p.mu2);
  out.s1 = lifted.s1;
  out.s2 = lifted.s2;
  out.s = out.s1 + out.s2;
  out.chosen_k = chosen;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace detail

// Two-component hybrid driver: per step one flexible-basis expansion, then
// parameter selection and the small regularized solve on the projection.
inline SolveResult sdhybr(const InverseProblem& p, const SolveOptions& opts = {}) {
  return detail::run_fggk_driver(p, opts, {FggkMode::smooth_and_sparse, true, true, true});
}

// Smooth-component baseline: prior-weighted subspace only, single parameter.
inline SolveResult genhybr(const InverseProblem& p, const SolveOptions& opts = {}) {
  return detail::run_fggk_driver(p, opts, {FggkMode::smooth_only, true, false, false});
}

// Sparse-component baseline: reweighted flexible subspace only, single
// parameter on the sparsity term.
inline SolveResult fhybr(const InverseProblem& p, const SolveOptions& opts = {}) {
  return detail::run_fggk_driver(p, opts, {FggkMode::sparse_only, false, true, true});
}

inline SolveResult solve(const InverseProblem& p, const SolveOptions& opts) {
  switch (opts.mode) {
    case FggkMode::smooth_and_sparse:
      return sdhybr(p, opts);
    case FggkMode::smooth_only:
      return genhybr(p, opts);
    case FggkMode::sparse_only:
      return fhybr(p, opts);
  }
  throw ConfigError("solve: unknown mode");
}

// Block-coordinate baseline: alternate the smooth solver on d - A s2 with the
// sparse solver on d - A s1 until the combined iterate settles.
inline SolveResult alternating(const InverseProblem& p, const SolveOptions& opts = {},
                               int max_sweeps = 20, int inner_budget = 200,
                               double sweep_tol = 1e-6) {
  auto t0 = std::chrono::steady_clock::now();
  const Index n = p.a.cols();
  const long base_af = p.a.forward_count(), base_aa = p.a.adjoint_count();
  const long base_q = p.q.apply_count(), base_r = p.r.inverse_count();

  SolveOptions inner = opts;
  if (inner.rule.kind == SelectionRule::Kind::optimal) inner.rule = SelectionRule::wgcv();

  SolveResult out;
  VectorXd s1 = p.mu1, s2 = p.mu2;
  VectorXd s_prev = s1 + s2;
  int used = 0;
  out.stop_reason = "sweep_budget";
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    if (used >= inner_budget) {
      out.stop_reason = "inner_budget";
      break;
    }
    SolveOptions o1 = inner;
    o1.max_iter = std::min(inner.max_iter, inner_budget - used);
    InverseProblem p1(p.a, p.r, p.q, p.d - p.a.forward(s2), p.mu1, VectorXd::Zero(n));
    SolveResult r1 = genhybr(p1, o1);
    used += static_cast<int>(r1.history.size());
    s1 = r1.s1;
    for (IterationRecord rec : r1.history) {
      rec.k = static_cast<int>(out.history.size()) + 1;
      out.history.push_back(rec);
    }

    if (used >= inner_budget) {
      out.stop_reason = "inner_budget";
      break;
    }
    SolveOptions o2 = inner;
    o2.max_iter = std::min(inner.max_iter, inner_budget - used);
    InverseProblem p2(p.a, p.r, p.q, p.d - p.a.forward(s1), VectorXd::Zero(n), p.mu2);
    SolveResult r2 = fhybr(p2, o2);
    used += static_cast<int>(r2.history.size());
    s2 = r2.s2;
    for (IterationRecord rec : r2.history) {
      rec.k = static_cast<int>(out.history.size()) + 1;
      out.history.push_back(rec);
    }

    VectorXd s_now = s1 + s2;
    double denom = std::max(s_prev.norm(), 1e-300);
    if ((s_now - s_prev).norm() / denom < sweep_tol) {
      out.stop_reason = "converged";
      s_prev = s_now;
      break;
    }
    s_prev = s_now;
  }
  out.s1 = s1;
  out.s2 = s2;
  out.s = s1 + s2;
  out.chosen_k = static_cast<int>(out.history.size());
  out.op_counts.a_forward = p.a.forward_count() - base_af;
  out.op_counts.a_adjoint = p.a.adjoint_count() - base_aa;
  out.op_counts.q_apply = p.q.apply_count() - base_q;
  out.op_counts.r_inverse = p.r.inverse_count() - base_r;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Stacked-basis variant driver with the two penalties coupled through a
// fixed ratio: alpha = lambda * lambda_ratio, one-parameter selection.
inline SolveResult sdhybr_alt(const InverseProblem& p, const SolveOptions& opts,
                              double lambda_ratio) {
  if (!(lambda_ratio > 0.0))
    throw std::domain_error("sdhybr_alt: lambda_ratio must be positive");
  auto t0 = std::chrono::steady_clock::now();
  const Index n = p.a.cols();

  VectorXd c = p.d;
  if (!p.mu1.isZero(0.0) || !p.mu2.isZero(0.0)) c -= p.a.forward(p.mu1 + p.mu2);
  SolveResult out;
  if (c.norm() == 0.0) {
    out.s1 = p.mu1;
    out.s2 = p.mu2;
    out.s = out.s1 + out.s2;
    out.stop_reason = "zero_residual";
    return out;
  }

  FggkOptions fopts;
  fopts.reorthogonalize = opts.reorthogonalize;
  fopts.tau_break = opts.tau_break;
  FggkAltProcess st(p.a, p.r.inverse_map(), p.q, c, fopts);

  StoppingPolicy pol = opts.stopping;
  pol.max_iter = opts.max_iter;

  std::vector<VectorXd> iterates;
  std::vector<MatrixXd> factors;
  std::vector<double> gvals;
  VectorXd xi = VectorXd::Zero(n);
  bool have_xi = false;
  int chosen = 0;

  auto lift_alt = [&](const VectorXd& f) {
    const Index j = f.size();
    LiftedSolution lifted;
    lifted.s1 = p.mu1 + st.QhatV.topRows(n).leftCols(j) * f;
    lifted.s2 = p.mu2 + st.Z.bottomRows(n).leftCols(j) * f;
    lifted.s = lifted.s1 + lifted.s2;
    return lifted;
  };

  for (int k = 1; k <= opts.max_iter; ++k) {
    SpdMap dmap = have_xi ? weight_matrix(xi, opts.epsilon) : SpdMap::identity(n);
    SpdMap dinv = dmap.inverse_map();
    StepStatus status = st.step(dinv);
    out.op_counts.d_inverse += dmap.inverse_count();
    if (status == StepStatus::v_breakdown) {
      out.stop_reason = "v_breakdown";
      chosen = k - 1;
      break;
    }

    // Coupled regularizer ||Z1 f||_Q^2 + ratio^2 ||Z2 f||^2 as one factor.
    MatrixXd z1 = st.Z.topRows(n);
    MatrixXd z2 = st.Z.bottomRows(n);
    MatrixXd gram = z1.transpose() * st.QhatV.topRows(n) +
                    lambda_ratio * lambda_ratio * z2.transpose() * z2;
    gram = 0.5 * (gram + gram.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
    VectorXd evals = eig.eigenvalues().cwiseMax(0.0);
    MatrixXd factor = evals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();

    ProjectedSystem sys;
    sys.M = st.G;
    sys.RW = factor;
    sys.beta1 = st.beta1;
    sys.k = st.k;
    sys.m_obs = p.a.rows();

    double lambda;
    if (opts.rule.kind == SelectionRule::Kind::fixed) {
      if (!opts.rule.fixed_values) throw ConfigError("sdhybr_alt: fixed rule without values");
      lambda = opts.rule.fixed_values->first;
    } else {
      std::function<double(double, double)> obj;
      switch (opts.rule.kind) {
        case SelectionRule::Kind::upre:
          obj = [&sys](double, double a) { return upre_objective(sys, 0.0, a); };
          break;
        case SelectionRule::Kind::dp:
          obj = [&sys, tau = opts.rule.tau](double, double a) {
            return dp_objective(sys, 0.0, a, tau);
          };
          break;
        case SelectionRule::Kind::wgcv:
          obj = [&sys](double, double a) { return wgcv_objective(sys, 0.0, a); };
          break;
        case SelectionRule::Kind::optimal: {
          if (!opts.rule.truth) throw ConfigError("sdhybr_alt: optimal rule without truth");
          obj = [&](double, double a) {
            VectorXd f = solve_projected(sys, 0.0, a);
            return (lift_alt(f).s - *opts.rule.truth).squaredNorm();
          };
          break;
        }
        default:
          throw ConfigError("sdhybr_alt: unsupported rule");
      }
      lambda = detail::search_log_params(obj).alpha;
    }

    VectorXd f = solve_projected(sys, 0.0, lambda);
    double gval = detail::safe_gcv(sys, 0.0, lambda);

    IterationRecord rec;
    rec.k = k;
    rec.lambda = lambda;
    rec.alpha = lambda * lambda_ratio;
    rec.gcv = gval;
    rec.res_norm = projected_residual(sys, f).norm();
    if (opts.rule.truth)
      rec.rel_err = (lift_alt(f).s - *opts.rule.truth).norm() / opts.rule.truth->norm();
    out.history.push_back(rec);
    iterates.push_back(f);
    factors.push_back(factor);
    gvals.push_back(gval);

    xi = st.Z.bottomRows(n) * f;
    have_xi = true;

    if (status == StepStatus::benign_breakdown) {
      out.stop_reason = "benign_breakdown";
      chosen = k;
      break;
    }
    StopDecision dec = check_stopping(gvals, pol);
    if (dec.stop) {
      out.stop_reason = dec.reason;
      chosen = dec.reason == "min_passed" ? dec.best_index + 1 : k;
      break;
    }
  }

  if (chosen < 1) {
    out.s1 = p.mu1;
    out.s2 = p.mu2;
    out.s = out.s1 + out.s2;
    out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }
  LiftedSolution lifted = lift_alt(iterates[chosen - 1]);
  out.s1 = lifted.s1;
  out.s2 = lifted.s2;
  out.s = out.s1 + out.s2;
  out.chosen_k = chosen;
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace sdkrylov
