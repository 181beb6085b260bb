// covariance.hpp: point grids, dense covariance assembly from stationary
// kernels, Kronecker space-time composition, and Gaussian field sampling.
#pragma once

#include <sdkrylov/core.hpp>
#include <sdkrylov/kernels.hpp>

#include <cstdint>
#include <random>

namespace sdkrylov {

enum class Metric { euclidean, great_circle };

// A finite set of sample locations plus the metric used between them.
// img_side / n_frames describe image structure when present (0 otherwise);
// ordering is spatial-fastest, row-major within a frame.
struct GridGeometry {
  MatrixXd points;  // n x dim; for great_circle the columns are (lat, lon)
  Metric metric = Metric::euclidean;
  Index img_side = 0;
  Index n_frames = 0;

  Index size() const { return points.rows(); }

  double distance(Index i, Index j) const {
    if (metric == Metric::great_circle)
      return great_circle_distance(points(i, 0), points(i, 1), points(j, 0), points(j, 1));
    return (points.row(i) - points.row(j)).norm();
  }

  static GridGeometry line(Index n) {
    if (n < 2) throw DimensionError("GridGeometry::line: need at least 2 points");
    GridGeometry g;
    g.points = VectorXd::LinSpaced(n, 0.0, 1.0);
    return g;
  }

  static GridGeometry unit_square(Index side) {
    if (side < 1) throw DimensionError("GridGeometry::unit_square: side must be positive");
    GridGeometry g;
    g.points.resize(side * side, 2);
    Index k = 0;
    for (Index row = 0; row < side; ++row)
      for (Index col = 0; col < side; ++col, ++k) {
        g.points(k, 0) = (double(col) + 0.5) / double(side);
        g.points(k, 1) = (double(row) + 0.5) / double(side);
      }
    g.img_side = side;
    g.n_frames = 1;
    return g;
  }

  // Pixels of `frames` stacked images of side `side`, embedded in the unit
  // cube with time as the third axis.
  static GridGeometry unit_cube_spacetime(Index side, Index frames) {
    if (side < 1 || frames < 2)
      throw DimensionError("GridGeometry::unit_cube_spacetime: need side >= 1 and frames >= 2");
    GridGeometry g;
    g.points.resize(side * side * frames, 3);
    Index k = 0;
    for (Index f = 0; f < frames; ++f) {
      double t = double(f) / double(frames - 1);
      for (Index row = 0; row < side; ++row)
        for (Index col = 0; col < side; ++col, ++k) {
          g.points(k, 0) = (double(col) + 0.5) / double(side);
          g.points(k, 1) = (double(row) + 0.5) / double(side);
          g.points(k, 2) = t;
        }
    }
    g.img_side = side;
    g.n_frames = frames;
    return g;
  }

  static GridGeometry lat_lon(MatrixXd pts) {
    if (pts.cols() != 2) throw DimensionError("GridGeometry::lat_lon: points must be n x 2");
    GridGeometry g;
    g.points = std::move(pts);
    g.metric = Metric::great_circle;
    return g;
  }
};

struct KernelSpec {
  enum class Family { matern, cubic_spherical };
  Family family = Family::matern;
  double nu = 0.5;
  double ell = 1.0;
  double theta = 1.0;

  static KernelSpec matern(double nu, double ell) {
    KernelSpec s;
    s.family = Family::matern;
    s.nu = nu;
    s.ell = ell;
    return s;
  }
  static KernelSpec cubic_spherical(double theta) {
    KernelSpec s;
    s.family = Family::cubic_spherical;
    s.theta = theta;
    return s;
  }

  double operator()(double d) const {
    return family == Family::matern ? matern_kernel(d, nu, ell) : cubic_spherical_kernel(d, theta);
  }
};

// Dense covariance over a grid. jitter < 0 picks the default of 1e-10 times
// the largest diagonal entry. Cholesky happens at construction; an
// indefinite assembly raises DefinitenessError with an eigenvalue estimate.
inline SpdMap build_covariance(const GridGeometry& grid, const KernelSpec& spec, double jitter = -1.0) {
  const Index n = grid.size();
  if (n > 16384)
    throw DimensionError("build_covariance: dense assembly capped at 16384 points, got " +
                         std::to_string(n));
  MatrixXd q(n, n);
  for (Index i = 0; i < n; ++i) {
    q(i, i) = spec(0.0);
    for (Index j = i + 1; j < n; ++j) {
      double v = spec(grid.distance(i, j));
      q(i, j) = v;
      q(j, i) = v;
    }
  }
  double eff = jitter < 0.0 ? 1e-10 * q.diagonal().maxCoeff() : jitter;
  q.diagonal().array() += eff;
  return SpdMap::dense(std::move(q));
}

namespace detail {
inline VectorXd kron_apply_fn(Index r, Index g, const std::function<VectorXd(const VectorXd&)>& ft,
                              const std::function<VectorXd(const VectorXd&)>& fs, const VectorXd& x) {
  Eigen::Map<const MatrixXd> xm(x.data(), g, r);
  MatrixXd y(g, r);
  for (Index j = 0; j < r; ++j) y.col(j) = fs(xm.col(j));
  MatrixXd yt = y.transpose();
  MatrixXd zt(r, g);
  for (Index j = 0; j < g; ++j) zt.col(j) = ft(yt.col(j));
  MatrixXd z = zt.transpose();
  return Eigen::Map<VectorXd>(z.data(), r * g);
}
}  // namespace detail

// lambda_scale^{-2} (Q_t (x) Q_s) in spatial-fastest ordering, never formed
// densely. Inverse and square root are inherited factor-wise:
// (Qt (x) Qs)^{-1} = Qt^{-1} (x) Qs^{-1}, and St Ss with St St' = Qt,
// Ss Ss' = Qs gives (St (x) Ss) as a square-root factor.
inline SpdMap spatiotemporal_q(const SpdMap& qt, const SpdMap& qs, double lambda_scale = 1.0) {
  if (lambda_scale == 0.0)
    throw std::domain_error("spatiotemporal_q: lambda_scale must be nonzero");
  const Index r = qt.dim(), g = qs.dim();
  const double c2 = 1.0 / (lambda_scale * lambda_scale);
  const double c1 = 1.0 / std::fabs(lambda_scale);
  auto qtp = std::make_shared<SpdMap>(qt);
  auto qsp = std::make_shared<SpdMap>(qs);
  SpdMap::Fn apply = [qtp, qsp, r, g, c2](const VectorXd& x) -> VectorXd {
    return c2 * detail::kron_apply_fn(
                    r, g, [&](const VectorXd& v) { return qtp->apply(v); },
                    [&](const VectorXd& v) { return qsp->apply(v); }, x);
  };
  SpdMap::Fn inverse = nullptr;
  if (qt.has_inverse() && qs.has_inverse())
    inverse = [qtp, qsp, r, g, c2](const VectorXd& x) -> VectorXd {
      return (1.0 / c2) * detail::kron_apply_fn(
                              r, g, [&](const VectorXd& v) { return qtp->apply_inverse(v); },
                              [&](const VectorXd& v) { return qsp->apply_inverse(v); }, x);
    };
  SpdMap::Fn sqrt = nullptr;
  if (qt.has_sqrt() && qs.has_sqrt())
    sqrt = [qtp, qsp, r, g, c1](const VectorXd& x) -> VectorXd {
      return c1 * detail::kron_apply_fn(
                      r, g, [&](const VectorXd& v) { return qtp->apply_sqrt(v); },
                      [&](const VectorXd& v) { return qsp->apply_sqrt(v); }, x);
    };
  return SpdMap(r * g, std::move(apply), std::move(inverse), std::move(sqrt));
}

namespace detail {
inline VectorXd gaussian_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd z(n);
  for (Index i = 0; i < n; ++i) z[i] = nd(gen);
  return z;
}

struct EigPairs {
  VectorXd values;   // descending
  MatrixXd vectors;  // orthonormal columns
};

// Leading eigenpairs of an SPD operator through its apply action only.
// Small problems go through a dense solve; larger ones use randomized
// subspace iteration, which is plenty accurate for sampling purposes.
inline EigPairs leading_eigenpairs(const SpdMap& q, Index r, std::uint64_t seed) {
  const Index n = q.dim();
  if (r < 1 || r > n)
    throw DimensionError("leading_eigenpairs: rank must be in [1, dim], got " + std::to_string(r));
  const Index l = std::min(n, r + 8);
  EigPairs out;
  if (l * 4 >= n) {
    MatrixXd qd = densify(q);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(qd);
    out.values = es.eigenvalues().tail(r).reverse();
    out.vectors = es.eigenvectors().rightCols(r).rowwise().reverse();
    return out;
  }
  MatrixXd x(n, l);
  {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Index j = 0; j < l; ++j)
      for (Index i = 0; i < n; ++i) x(i, j) = nd(gen);
  }
  auto apply_block = [&](const MatrixXd& b) {
    MatrixXd y(n, b.cols());
    for (Index j = 0; j < b.cols(); ++j) y.col(j) = q.apply(b.col(j));
    return y;
  };
  auto orth = [](const MatrixXd& b) {
    Eigen::HouseholderQR<MatrixXd> qr(b);
    return MatrixXd(qr.householderQ() * MatrixXd::Identity(b.rows(), b.cols()));
  };
  for (int sweep = 0; sweep < 5; ++sweep) x = apply_block(orth(x));
  x = orth(x);
  MatrixXd b = x.transpose() * apply_block(x);
  b = 0.5 * (b + b.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(b);
  out.values = es.eigenvalues().tail(r).reverse();
  out.vectors = x * MatrixXd(es.eigenvectors().rightCols(r).rowwise().reverse());
  return out;
}
}  // namespace detail

// Draw mean + Q^{1/2} z with z standard normal from the given seed.
// r > 0 replaces Q^{1/2} by its rank-r truncated expansion (the leading
// eigenpairs), which only needs the apply action of Q.
inline VectorXd sample_smooth_field(const SpdMap& q, const VectorXd& mean, std::uint64_t seed,
                                    Index r = 0) {
  detail::check_length("sample_smooth_field", "mean", q.dim(), mean.size());
  if (r == 0) {
    if (!q.has_sqrt())
      throw std::logic_error("sample_smooth_field: operator has no square root, pass a truncation rank");
    VectorXd z = detail::gaussian_vector(q.dim(), seed);
    return mean + q.apply_sqrt(z);
  }
  auto pairs = detail::leading_eigenpairs(q, r, seed ^ 0x9E3779B97F4A7C15ull);
  VectorXd z = detail::gaussian_vector(r, seed);
  VectorXd vals = pairs.values.cwiseMax(0.0).cwiseSqrt();
  return mean + pairs.vectors * vals.cwiseProduct(z).matrix();
}

}  // namespace sdkrylov
