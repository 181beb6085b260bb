#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdkrylov/projected.hpp"

namespace sdkrylov {

// How (lambda, alpha) are chosen on the projected problem. `optimal` needs
// the true solution and exists for studies; `fixed` bypasses the search.
struct SelectionRule {
  enum class Kind { optimal, upre, dp, wgcv, fixed };

  Kind kind = Kind::wgcv;
  double tau = 1.0;  // discrepancy safety factor, >= 1
  std::optional<std::pair<double, double>> fixed_values;
  std::optional<VectorXd> truth;

  static SelectionRule upre() { return {Kind::upre, 1.0, {}, {}}; }
  static SelectionRule wgcv() { return {Kind::wgcv, 1.0, {}, {}}; }
  static SelectionRule dp(double tau = 1.0) {
    if (!(tau >= 1.0)) throw ConfigError("SelectionRule::dp: tau must be >= 1");
    return {Kind::dp, tau, {}, {}};
  }
  static SelectionRule fixed(double lambda, double alpha) {
    return {Kind::fixed, 1.0, std::make_pair(lambda, alpha), {}};
  }
  static SelectionRule optimal(VectorXd s_true) {
    return {Kind::optimal, 1.0, {}, std::move(s_true)};
  }
};

struct StoppingPolicy {
  int max_iter = 50;
  double gcv_tol = 1e-6;  // relative flatness tolerance on the stop value
  int window = 3;         // consecutive iterations a trend must persist
};

struct StopDecision {
  bool stop = false;
  std::string reason;   // "max_iter", "min_passed", or "flat" when stop is set
  int best_index = -1;  // argmin of the history (first on ties)
};

// Unbiased-predictive-risk value (1/k)||r||^2 + (2/k) tr(MC) - 1. The noise
// scale is assumed folded into the observation weighting, so the residual is
// already whitened.
inline double upre_objective(const ProjectedSystem& sys, double lambda, double alpha) {
  VectorXd f = solve_projected(sys, lambda, alpha);
  double rr = projected_residual(sys, f).squaredNorm();
  double k = static_cast<double>(sys.k);
  return rr / k + 2.0 * influence_trace(sys, lambda, alpha) / k - 1.0;
}

// Absolute discrepancy | ||r||^2 - m tau | against the whitened noise level.
inline double dp_objective(const ProjectedSystem& sys, double lambda, double alpha,
                           double tau = 1.0) {
  if (!(tau >= 1.0)) throw ConfigError("dp_objective: tau must be >= 1");
  if (sys.m_obs < 1) throw DimensionError("dp_objective: m_obs not set");
  VectorXd f = solve_projected(sys, lambda, alpha);
  double rr = projected_residual(sys, f).squaredNorm();
  return std::abs(rr - static_cast<double>(sys.m_obs) * tau);
}

// Weighted GCV ||r||^2 / (k - omega tr(MC))^2 with the given weight.
inline double wgcv_objective(const ProjectedSystem& sys, double lambda, double alpha,
                             double omega) {
  VectorXd f = solve_projected(sys, lambda, alpha);
  double rr = projected_residual(sys, f).squaredNorm();
  double denom = static_cast<double>(sys.k) - omega * influence_trace(sys, lambda, alpha);
  if (std::abs(denom) < 1e-14)
    throw SelectionError("wgcv_objective: degenerate trace denominator");
  return rr / (denom * denom);
}

// Default weight omega = k / m_obs.
inline double wgcv_objective(const ProjectedSystem& sys, double lambda, double alpha) {
  if (sys.m_obs < sys.k) throw DimensionError("wgcv_objective: m_obs must be >= k");
  return wgcv_objective(sys, lambda, alpha,
                        static_cast<double>(sys.k) / static_cast<double>(sys.m_obs));
}

// Squared error of the lifted solution against a known truth (study harness).
inline double optimal_objective(const FggkProcess& st, const ProjectedSystem& sys, double lambda,
                                double alpha, const VectorXd& mu1, const VectorXd& mu2,
                                const SpdMap& q, const VectorXd& s_true) {
  detail::check_length("optimal_objective", "s_true", st.n_cols(), s_true.size());
  VectorXd f = solve_projected(sys, lambda, alpha);
  LiftedSolution lifted = lift_solution(st, f, mu1, mu2, q);
  return (lifted.s - s_true).squaredNorm();
}

// Iteration-stopping value k ||r||^2 / (k - tr(MC))^2, evaluated at the
// parameters selected for the current iteration.
inline double gcv_stop_value(const ProjectedSystem& sys, double lambda, double alpha) {
  VectorXd f = solve_projected(sys, lambda, alpha);
  double rr = projected_residual(sys, f).squaredNorm();
  double k = static_cast<double>(sys.k);
  double denom = k - influence_trace(sys, lambda, alpha);
  if (std::abs(denom) < 1e-14)
    throw SelectionError("gcv_stop_value: degenerate trace denominator");
  return k * rr / (denom * denom);
}

namespace detail {

struct SearchResult {
  double lambda = 0.0;
  double alpha = 0.0;
  double value = std::numeric_limits<double>::infinity();
};

// Minimizes objective(lambda, alpha) over log10 coordinates: Nelder-Mead from
// (-0.5, -0.5) followed by a coarse log-grid safeguard; returns the better of
// the two, so the result is never worse than the best grid point. Objective
// failures count as +inf; if every evaluation fails the search throws with
// the last underlying cause.
inline SearchResult search_log_params(const std::function<double(double, double)>& objective,
                                      double grid_lo = -6.0, double grid_hi = 2.0,
                                      int grid_pts = 9) {
  using Vec2 = std::array<double, 2>;
  long evals_ok = 0;
  std::string last_error = "no evaluations attempted";
  auto eval = [&](const Vec2& y) {
    double v;
    try {
      v = objective(std::pow(10.0, y[0]), std::pow(10.0, y[1]));
    } catch (const std::exception& e) {
      last_error = e.what();
      return std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(v)) {
      last_error = "objective returned a non-finite value";
      return std::numeric_limits<double>::infinity();
    }
    ++evals_ok;
    return v;
  };

  // Nelder-Mead with the standard coefficients.
  std::array<Vec2, 3> x = {Vec2{-0.5, -0.5}, Vec2{0.0, -0.5}, Vec2{-0.5, 0.0}};
  std::array<double, 3> fx;
  for (int i = 0; i < 3; ++i) fx[i] = eval(x[i]);
  auto order = [&] {
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        if (fx[b] < fx[a]) {
          std::swap(fx[a], fx[b]);
          std::swap(x[a], x[b]);
        }
  };
  order();
  for (int it = 0; it < 300; ++it) {
    double spread = std::max({std::abs(x[0][0] - x[1][0]), std::abs(x[0][1] - x[1][1]),
                              std::abs(x[0][0] - x[2][0]), std::abs(x[0][1] - x[2][1])});
    if (spread < 1e-10) break;
    Vec2 cen = {(x[0][0] + x[1][0]) / 2.0, (x[0][1] + x[1][1]) / 2.0};
    auto at = [&](double t) {
      return Vec2{cen[0] + t * (cen[0] - x[2][0]), cen[1] + t * (cen[1] - x[2][1])};
    };
    Vec2 xr = at(1.0);
    double fr = eval(xr);
    if (fr < fx[0]) {
      Vec2 xe = at(2.0);
      double fe = eval(xe);
      if (fe < fr) {
        x[2] = xe;
        fx[2] = fe;
      } else {
        x[2] = xr;
        fx[2] = fr;
      }
    } else if (fr < fx[1]) {
      x[2] = xr;
      fx[2] = fr;
    } else {
      Vec2 xc = at(fr < fx[2] ? 0.5 : -0.5);
      double fc = eval(xc);
      if (fc < std::min(fr, fx[2])) {
        x[2] = xc;
        fx[2] = fc;
      } else {
        for (int i = 1; i < 3; ++i) {
          x[i] = {x[0][0] + 0.5 * (x[i][0] - x[0][0]), x[0][1] + 0.5 * (x[i][1] - x[0][1])};
          fx[i] = eval(x[i]);
        }
      }
    }
    order();
  }
  SearchResult best;
  best.lambda = std::pow(10.0, x[0][0]);
  best.alpha = std::pow(10.0, x[0][1]);
  best.value = fx[0];

  // Coarse log-grid safeguard.
  for (int i = 0; i < grid_pts; ++i)
    for (int j = 0; j < grid_pts; ++j) {
      double step = grid_pts > 1 ? (grid_hi - grid_lo) / (grid_pts - 1) : 0.0;
      Vec2 y = {grid_lo + i * step, grid_lo + j * step};
      double v = eval(y);
      if (v < best.value) {
        best.lambda = std::pow(10.0, y[0]);
        best.alpha = std::pow(10.0, y[1]);
        best.value = v;
      }
    }

  if (evals_ok == 0)
    throw SelectionError("search_log_params: all objective evaluations failed: " + last_error);
  return best;
}

}  // namespace detail

// Extra context needed only by the `optimal` rule (lift back to full space).
struct SelectionAux {
  const FggkProcess* state = nullptr;
  const SpdMap* q = nullptr;
  VectorXd mu1, mu2;
};

inline std::pair<double, double> select_params(const ProjectedSystem& sys,
                                               const SelectionRule& rule,
                                               const SelectionAux& aux = {}) {
  using Kind = SelectionRule::Kind;
  if (rule.kind == Kind::fixed) {
    if (!rule.fixed_values) throw ConfigError("select_params: fixed rule without fixed_values");
    return *rule.fixed_values;
  }
  std::function<double(double, double)> objective;
  switch (rule.kind) {
    case Kind::upre:
      objective = [&sys](double l, double a) { return upre_objective(sys, l, a); };
      break;
    case Kind::dp:
      if (!(rule.tau >= 1.0)) throw ConfigError("select_params: dp tau must be >= 1");
      objective = [&sys, &rule](double l, double a) { return dp_objective(sys, l, a, rule.tau); };
      break;
    case Kind::wgcv:
      objective = [&sys](double l, double a) { return wgcv_objective(sys, l, a); };
      break;
    case Kind::optimal: {
      if (!rule.truth) throw ConfigError("select_params: optimal rule without truth");
      if (aux.state == nullptr || aux.q == nullptr)
        throw ConfigError("select_params: optimal rule needs state and q in aux");
      objective = [&sys, &rule, &aux](double l, double a) {
        return optimal_objective(*aux.state, sys, l, a, aux.mu1, aux.mu2, *aux.q, *rule.truth);
      };
      break;
    }
    default:
      throw ConfigError("select_params: unknown rule");
  }
  detail::SearchResult r = detail::search_log_params(objective);
  return {r.lambda, r.alpha};
}

// Decide whether the outer iteration should stop, checking in order: the
// iteration cap, a persistent rise above the running minimum, and relative
// flatness of the stop-value sequence.
inline StopDecision check_stopping(const std::vector<double>& history,
                                   const StoppingPolicy& policy) {
  if (history.empty()) throw std::invalid_argument("check_stopping: empty history");
  const int k = static_cast<int>(history.size());
  StopDecision d;
  d.best_index = static_cast<int>(
      std::min_element(history.begin(), history.end()) - history.begin());

  if (k >= policy.max_iter) {
    d.stop = true;
    d.reason = "max_iter";
    return d;
  }
  const int w = policy.window;
  if (w >= 1 && k > w) {
    bool rose = true;
    for (int i = k - w; i < k; ++i) {
      double prev_min = *std::min_element(history.begin(), history.begin() + i);
      if (!(history[i] > prev_min)) {
        rose = false;
        break;
      }
    }
    if (rose) {
      d.stop = true;
      d.reason = "min_passed";
      return d;
    }
    bool flat = true;
    for (int i = k - w; i < k; ++i) {
      double base = std::max(std::abs(history[i - 1]), std::numeric_limits<double>::epsilon());
      if (std::abs(history[i] - history[i - 1]) / base >= policy.gcv_tol) {
        flat = false;
        break;
      }
    }
    if (flat) {
      d.stop = true;
      d.reason = "flat";
      return d;
    }
  }
  return d;
}

}  // namespace sdkrylov
