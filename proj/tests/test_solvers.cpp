#include <sdkrylov/solvers.hpp>

#include <gtest/gtest.h>

#include <sdkrylov/mm_oracle.hpp>

#include <cmath>

#include "util.hpp"

namespace {

using namespace sdkrylov;
using testutil::random_matrix;
using testutil::random_positive;
using testutil::random_spd;
using testutil::random_vector;

StoppingPolicy no_early_stop() {
  StoppingPolicy p;
  p.window = 1000;  // disable both data-driven criteria; only max_iter fires
  p.gcv_tol = 1e-300;
  return p;
}

InverseProblem random_problem(Index m, Index n, unsigned seed, VectorXd mu1 = {},
                              VectorXd mu2 = {}) {
  MatrixXd ad = random_matrix(m, n, seed);
  VectorXd rdiag = random_positive(m, seed + 1);
  MatrixXd qd = random_spd(n, seed + 2);
  VectorXd d = random_vector(m, seed + 3);
  return InverseProblem(LinearMap::dense(ad), diag_map(rdiag), SpdMap::dense(qd), d,
                        std::move(mu1), std::move(mu2));
}

double weight_entry(const SpdMap& w, Index i) {
  return w.apply(VectorXd::Unit(w.dim(), i))[i];
}

TEST(WeightMatrix, ZeroXiFormula) {
  auto w = weight_matrix(VectorXd::Zero(4), 1e-6);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(weight_entry(w, i), std::sqrt(500.0), 1e-9);
}

TEST(WeightMatrix, LargeXiAsymptote) {
  VectorXd xi = VectorXd::Constant(3, 8.0);
  auto w = weight_matrix(xi, 1e-12);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(weight_entry(w, i), 0.25, 1e-9);
}

TEST(WeightMatrix, MidRangeValue) {
  VectorXd xi = VectorXd::Constant(1, 4.0);
  auto w = weight_matrix(xi, 1e-6);
  EXPECT_NEAR(weight_entry(w, 0), 1.0 / std::sqrt(2.0 * std::sqrt(16.000001)), 1e-12);
  EXPECT_NEAR(weight_entry(w, 0), 0.3535534, 1e-7);
}

TEST(WeightMatrix, RejectsNonpositiveEpsilon) {
  EXPECT_THROW(weight_matrix(VectorXd::Zero(2), 0.0), std::domain_error);
}

TEST(Sdhybr, ZeroResidualReturnsMeans) {
  Index m = 10, n = 6;
  MatrixXd ad = random_matrix(m, n, 1300);
  VectorXd mu1 = random_vector(n, 1), mu2 = random_vector(n, 2);
  VectorXd d = ad * (mu1 + mu2);
  InverseProblem p(LinearMap::dense(ad), diag_map(random_positive(m, 3)),
                   SpdMap::dense(random_spd(n, 1301)), d, mu1, mu2);
  auto res = sdhybr(p);
  EXPECT_EQ(res.stop_reason, "zero_residual");
  EXPECT_TRUE(res.history.empty());
  EXPECT_LT((res.s - (mu1 + mu2)).norm(), 1e-12);
  EXPECT_EQ(res.s, res.s1 + res.s2);
}

TEST(Sdhybr, DeterministicRerun) {
  auto p = random_problem(20, 14, 1310);
  SolveOptions opts;
  opts.max_iter = 8;
  auto r1 = sdhybr(p, opts);
  auto r2 = sdhybr(p, opts);
  ASSERT_EQ(r1.history.size(), r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i) {
    EXPECT_EQ(r1.history[i].lambda, r2.history[i].lambda);
    EXPECT_EQ(r1.history[i].alpha, r2.history[i].alpha);
    EXPECT_EQ(r1.history[i].gcv, r2.history[i].gcv);
  }
  EXPECT_EQ(r1.s, r2.s);
  EXPECT_EQ(r1.stop_reason, r2.stop_reason);
}

TEST(Sdhybr, OperatorBudgetPerIteration) {
  auto p = random_problem(24, 16, 1320);
  SolveOptions opts;
  opts.max_iter = 7;
  opts.rule = SelectionRule::fixed(0.1, 0.2);
  opts.stopping = no_early_stop();
  auto res = sdhybr(p, opts);
  long k = static_cast<long>(res.history.size());
  ASSERT_EQ(k, 7);
  EXPECT_EQ(res.op_counts.a_forward, k);
  EXPECT_EQ(res.op_counts.a_adjoint, k);
  EXPECT_EQ(res.op_counts.q_apply, 2 * k);
  EXPECT_EQ(res.op_counts.r_inverse, k);
  EXPECT_EQ(res.op_counts.d_inverse, k);
}

TEST(Sdhybr, SumInvariantAndChosenK) {
  auto p = random_problem(18, 12, 1330);
  SolveOptions opts;
  opts.max_iter = 6;
  auto res = sdhybr(p, opts);
  EXPECT_EQ(res.s, res.s1 + res.s2);
  EXPECT_GE(res.chosen_k, 1);
  EXPECT_LE(res.chosen_k, static_cast<int>(res.history.size()));
}

TEST(Sdhybr, RelErrRecordedOnlyWithTruth) {
  auto p = random_problem(16, 10, 1340);
  SolveOptions opts;
  opts.max_iter = 4;
  auto res = sdhybr(p, opts);
  EXPECT_FALSE(res.history.front().rel_err.has_value());
  opts.rule = SelectionRule::optimal(random_vector(10, 9));
  auto res2 = sdhybr(p, opts);
  EXPECT_TRUE(res2.history.front().rel_err.has_value());
}

TEST(Sdhybr, VBreakdownReturnsPartialResult) {
  // n = 2 exhausts the prior-weighted subspace after two steps.
  auto p = random_problem(6, 2, 1350);
  SolveOptions opts;
  opts.max_iter = 5;
  opts.rule = SelectionRule::fixed(0.2, 0.3);
  opts.stopping = no_early_stop();
  auto res = sdhybr(p, opts);
  EXPECT_EQ(res.stop_reason, "v_breakdown");
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.chosen_k, 2);
  EXPECT_TRUE(res.s.allFinite());
}

TEST(Genhybr, MatchesDenseTikhonovAtFullDepth) {
  Index m = 20, n = 16;
  MatrixXd ad = random_matrix(m, n, 1360);
  VectorXd rdiag = random_positive(m, 4);
  MatrixXd qd = random_spd(n, 1361);
  VectorXd d = random_vector(m, 5);
  InverseProblem p(LinearMap::dense(ad), diag_map(rdiag), SpdMap::dense(qd), d);
  double lambda = 0.4;
  SolveOptions opts;
  opts.max_iter = static_cast<int>(n);
  opts.rule = SelectionRule::fixed(lambda, 99.0);  // alpha is pinned to zero
  opts.stopping = no_early_stop();
  auto res = genhybr(p, opts);
  ASSERT_EQ(res.history.size(), static_cast<size_t>(n));

  MatrixXd rinvd = rdiag.cwiseInverse().asDiagonal();
  MatrixXd h = ad.transpose() * rinvd * ad + lambda * lambda * qd.inverse();
  VectorXd want = h.ldlt().solve(ad.transpose() * (rinvd * d));
  EXPECT_LT((res.s - want).norm(), 1e-8 * want.norm());
  EXPECT_LT(res.s2.norm(), 1e-15);
}

TEST(Genhybr, ZeroNoiseConsistency) {
  Index n = 12;
  MatrixXd ad = random_matrix(n, n, 1370);
  ad.diagonal().array() += 4.0;  // well conditioned square operator
  VectorXd strue = random_vector(n, 6);
  InverseProblem p(LinearMap::dense(ad), SpdMap::identity(n),
                   SpdMap::dense(random_spd(n, 1371)), ad * strue);
  SolveOptions opts;
  opts.max_iter = static_cast<int>(n);
  opts.rule = SelectionRule::fixed(1e-8, 0.0);
  opts.stopping = no_early_stop();
  auto res = genhybr(p, opts);
  EXPECT_LT((res.s - strue).norm(), 1e-6 * strue.norm());
}

TEST(Fhybr, FullDampingReturnsSparseMean) {
  VectorXd mu2 = random_vector(10, 11);
  auto p = random_problem(14, 10, 1380, VectorXd::Zero(10), mu2);
  SolveOptions opts;
  opts.max_iter = 1;
  opts.rule = SelectionRule::fixed(0.0, 1e10);
  opts.stopping = no_early_stop();
  auto res = fhybr(p, opts);
  EXPECT_LT((res.s2 - mu2).norm(), 1e-6 * (1.0 + mu2.norm()));
  EXPECT_LT(res.s1.norm(), 1e-15);
  EXPECT_EQ(res.s, res.s1 + res.s2);
}

TEST(Fhybr, SpikeSupportConcentrates) {
  Index n = 20;
  VectorXd strue = VectorXd::Zero(n);
  strue[7] = 5.0;
  VectorXd noise = random_vector(n, 12);
  VectorXd d = strue + 1e-3 * strue.norm() / noise.norm() * noise;
  InverseProblem p(LinearMap::identity(n), SpdMap::identity(n), SpdMap::identity(n), d);
  SolveOptions opts;
  opts.max_iter = 10;
  opts.rule = SelectionRule::wgcv();
  auto res = fhybr(p, opts);
  Index argmax = 0;
  res.s2.cwiseAbs().maxCoeff(&argmax);
  EXPECT_EQ(argmax, 7);
}

TEST(Comparison, SmoothTruthFavorsSmoothSolver) {
  // Smooth truth: a prior sample drawn from Q itself. fhybr lacks the
  // smooth background and must do worse; sdhybr should not invent spikes.
  Index m = 40, n = 32;
  MatrixXd qd = random_spd(n, 1390, 0.1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(qd);
  MatrixXd qhalf =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  VectorXd strue = qhalf * random_vector(n, 13);
  MatrixXd ad = random_matrix(m, n, 1391);
  VectorXd noise = random_vector(m, 14);
  VectorXd d = ad * strue;
  d += 0.02 * d.norm() / noise.norm() * noise;
  double sigma2 = std::pow(0.02 * (ad * strue).norm(), 2) / m;
  InverseProblem p(LinearMap::dense(ad), diag_map(VectorXd::Constant(m, sigma2)),
                   SpdMap::dense(qd), d);
  SolveOptions opts;
  opts.max_iter = 24;
  opts.rule = SelectionRule::optimal(strue);
  auto rg = genhybr(p, opts);
  auto rf = fhybr(p, opts);
  auto rs = sdhybr(p, opts);
  double eg = (rg.s - strue).norm() / strue.norm();
  double ef = (rf.s - strue).norm() / strue.norm();
  double es = (rs.s - strue).norm() / strue.norm();
  EXPECT_GT(ef, eg);
  EXPECT_LE(std::abs(es - eg), 0.10 * eg);  // decomposition does not lose the smooth field
  EXPECT_LE(rs.s2.norm(), 0.5 * (rs.s1.norm() + 1e-30));
}

TEST(Alternating, OracleInitializationReachesSmoothQuality) {
  Index m = 24, n = 18;
  MatrixXd qd = random_spd(n, 1400, 0.1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(qd);
  MatrixXd qhalf =
      eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  VectorXd s1_true = qhalf * random_vector(n, 15);
  VectorXd s2_true = VectorXd::Zero(n);
  s2_true[4] = 3.0;
  s2_true[13] = -2.0;
  MatrixXd ad = random_matrix(m, n, 1401);
  VectorXd noise = random_vector(m, 16);
  VectorXd d = ad * (s1_true + s2_true);
  d += 0.01 * d.norm() / noise.norm() * noise;
  double sigma2 = std::pow(0.01 * (ad * (s1_true + s2_true)).norm(), 2) / m;
  SpdMap r = diag_map(VectorXd::Constant(m, sigma2));

  // Alternating with the true sparse part injected as its starting point:
  // the first sweep's smooth half already sees the exact residual data.
  InverseProblem p(LinearMap::dense(ad), r, SpdMap::dense(qd), d, VectorXd::Zero(n), s2_true);
  SolveOptions opts;
  opts.max_iter = 12;
  auto ra = alternating(p, opts, 1);

  // Reference: the smooth solver applied directly to the residual data.
  InverseProblem pref(LinearMap::dense(ad), r, SpdMap::dense(qd), d - ad * s2_true);
  auto rg = genhybr(pref, opts);
  EXPECT_LT((ra.s1 - rg.s1).norm(), 1e-10 * (1.0 + rg.s1.norm()));
  double ea = (ra.s1 - s1_true).norm() / s1_true.norm();
  double eg = (rg.s1 - s1_true).norm() / s1_true.norm();
  EXPECT_LE(ea, eg + 1e-10);
}

TEST(Alternating, StopsAndSumsExactly) {
  auto p = random_problem(16, 12, 1410);
  SolveOptions opts;
  opts.max_iter = 6;
  auto res = alternating(p, opts, 5, 60);
  EXPECT_EQ(res.s, res.s1 + res.s2);
  EXPECT_TRUE(res.stop_reason == "converged" || res.stop_reason == "sweep_budget" ||
              res.stop_reason == "inner_budget");
  EXPECT_FALSE(res.history.empty());
}

TEST(Alternating, WallTimeExceedsSingleSolve) {
  auto p = random_problem(36, 30, 1420);
  SolveOptions opts;
  opts.max_iter = 10;
  auto rs = sdhybr(p, opts);
  auto ra = alternating(p, opts, 8, 160);
  EXPECT_GT(ra.wall_time, rs.wall_time);
}

TEST(SdhybrAlt, MatchesSdhybrWithIdentityCovariancesAndUnitRatio) {
  // With Q = I and effectively constant reweighting, the stacked variant and
  // the two-block driver search the same coupled manifold; at full depth
  // both reach the same regularized minimum.
  Index m = 12, n = 6;
  MatrixXd ad = random_matrix(m, n, 1430);
  VectorXd d = random_vector(m, 17);
  InverseProblem p(LinearMap::dense(ad), SpdMap::identity(m), SpdMap::identity(n), d);
  SolveOptions opts;
  opts.max_iter = static_cast<int>(n);
  opts.rule = SelectionRule::fixed(0.4, 0.4);
  opts.stopping = no_early_stop();
  opts.epsilon = 1e12;  // keeps D essentially constant across iterations
  auto rs = sdhybr(p, opts);
  auto ra = sdhybr_alt(p, opts, 1.0);
  ASSERT_EQ(rs.history.size(), ra.history.size());
  EXPECT_LT((rs.s - ra.s).norm(), 1e-8 * (1.0 + rs.s.norm()));
  EXPECT_LT((rs.s1 - ra.s1).norm(), 1e-8 * (1.0 + rs.s1.norm()));
  EXPECT_LT((rs.s2 - ra.s2).norm(), 1e-8 * (1.0 + rs.s2.norm()));
}

TEST(SdhybrAlt, FullDampingReturnsMeans) {
  VectorXd mu1 = random_vector(8, 18), mu2 = random_vector(8, 19);
  auto p = random_problem(12, 8, 1440, mu1, mu2);
  SolveOptions opts;
  opts.max_iter = 3;
  opts.rule = SelectionRule::fixed(1e10, 0.0);
  opts.stopping = no_early_stop();
  auto res = sdhybr_alt(p, opts, 1.0);
  EXPECT_LT((res.s - (mu1 + mu2)).norm(), 1e-6 * (mu1 + mu2).norm());
}

TEST(SdhybrAlt, RejectsNonpositiveRatio) {
  auto p = random_problem(10, 6, 1450);
  EXPECT_THROW(sdhybr_alt(p, SolveOptions{}, 0.0), std::domain_error);
}

TEST(SolveDispatch, ModeSelectsDriver) {
  auto p = random_problem(14, 9, 1460);
  SolveOptions opts;
  opts.max_iter = 5;
  opts.mode = FggkMode::smooth_only;
  auto r1 = solve(p, opts);
  auto r2 = genhybr(p, opts);
  EXPECT_EQ(r1.s, r2.s);
  opts.mode = FggkMode::sparse_only;
  auto r3 = solve(p, opts);
  auto r4 = fhybr(p, opts);
  EXPECT_EQ(r3.s, r4.s);
}

TEST(Alternating, MapObjectiveDescendsAndStaysLevel) {
  // Fixed parameters and full inner depth. The smooth half minimizes its
  // block exactly, so the first sweep drops the joint smoothed objective far
  // below its starting value. Later sweeps restart the sparse half's
  // reweighting from scratch, so strict monotonicity is not guaranteed; the
  // audit pins descent from initialization plus a tight drift bound.
  Index m = 20, n = 12;
  MatrixXd ad = random_matrix(m, n, 1470);
  VectorXd rdiag = random_positive(m, 20);
  MatrixXd qd = random_spd(n, 1471);
  VectorXd d = random_vector(m, 21);
  InverseProblem p(LinearMap::dense(ad), diag_map(rdiag), SpdMap::dense(qd), d);
  double lambda = 0.5, alpha = 0.7, eps = 1e-6;
  SolveOptions opts;
  opts.max_iter = static_cast<int>(n);
  opts.rule = SelectionRule::fixed(lambda, alpha);
  opts.stopping = no_early_stop();
  opts.epsilon = eps;

  MatrixXd rinvd = rdiag.cwiseInverse().asDiagonal();
  MatrixXd qinv = qd.inverse();
  auto objective = [&](const VectorXd& s1, const VectorXd& s2) {
    VectorXd w = ad * (s1 + s2) - d;
    double val = w.dot(rinvd * w) + lambda * lambda * s1.dot(qinv * s1);
    for (Index j = 0; j < n; ++j) val += alpha * alpha * std::sqrt(s2[j] * s2[j] + eps);
    return val;
  };

  double start = objective(VectorXd::Zero(n), VectorXd::Zero(n));
  double first = 0.0;
  for (int sweeps = 1; sweeps <= 4; ++sweeps) {
    auto res = alternating(p, opts, sweeps, 1000);
    double cur = objective(res.s1, res.s2);
    EXPECT_LT(cur, 0.5 * start);
    if (sweeps == 1)
      first = cur;
    else
      EXPECT_LE(cur, 1.02 * first);
  }
}

}  // namespace
