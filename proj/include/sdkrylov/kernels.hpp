// kernels.hpp: stationary correlation kernels and geodesic distance.
//
// Matern family follows Rasmussen & Williams, Gaussian Processes for
// Machine Learning (2006), eq. 4.14, with dedicated closed forms at
// nu = 1/2, 3/2, 5/2 and the modified-Bessel route elsewhere.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sdkrylov {

namespace detail {
// General-nu Matern through the modified Bessel function of the second
// kind, usable at any nu > 0 including the half-integers.
inline double matern_general(double d, double nu, double ell) {
  double t = std::sqrt(2.0 * nu) * d / ell;
  // K_nu underflows for large t; the kernel limit there is 0.
  double bk = std::cyl_bessel_k(nu, t);
  if (bk == 0.0 || !std::isfinite(bk)) return 0.0;
  double v = std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(t, nu) * bk;
  return v > 1.0 ? 1.0 : v;  // clamp roundoff at tiny distances
}
}  // namespace detail

inline double matern_kernel(double d, double nu, double ell) {
  if (!(nu > 0.0)) throw std::domain_error("matern_kernel: nu must be positive, got " + std::to_string(nu));
  if (!(ell > 0.0)) throw std::domain_error("matern_kernel: ell must be positive, got " + std::to_string(ell));
  if (!(d >= 0.0)) throw std::domain_error("matern_kernel: distance must be nonnegative, got " + std::to_string(d));
  if (d == 0.0) return 1.0;

  const double half_tol = 1e-12;
  if (std::fabs(nu - 0.5) < half_tol) {
    return std::exp(-d / ell);
  }
  if (std::fabs(nu - 1.5) < half_tol) {
    double t = std::sqrt(3.0) * d / ell;
    return (1.0 + t) * std::exp(-t);
  }
  if (std::fabs(nu - 2.5) < half_tol) {
    double t = std::sqrt(5.0) * d / ell;
    return (1.0 + t + t * t / 3.0) * std::exp(-t);
  }
  return detail::matern_general(d, nu, ell);
}

// Spherical covariance with cubic taper: compactly supported on [0, theta].
inline double cubic_spherical_kernel(double d, double theta) {
  if (!(theta > 0.0))
    throw std::domain_error("cubic_spherical_kernel: theta must be positive, got " + std::to_string(theta));
  if (!(d >= 0.0))
    throw std::domain_error("cubic_spherical_kernel: distance must be nonnegative, got " + std::to_string(d));
  if (d >= theta) return 0.0;
  double u = d / theta;
  return 1.0 - 1.5 * u + 0.5 * u * u * u;
}

// Haversine distance in kilometres on a sphere of radius 6371.0 km.
// Latitudes in degrees in [-90, 90], longitudes in degrees in [-180, 360).
inline double great_circle_distance(double lat1, double lon1, double lat2, double lon2) {
  auto check_lat = [](double lat) {
    if (!(lat >= -90.0 && lat <= 90.0))
      throw std::domain_error("great_circle_distance: latitude out of [-90, 90]: " + std::to_string(lat));
  };
  auto check_lon = [](double lon) {
    if (!(lon >= -180.0 && lon < 360.0))
      throw std::domain_error("great_circle_distance: longitude out of [-180, 360): " + std::to_string(lon));
  };
  check_lat(lat1);
  check_lat(lat2);
  check_lon(lon1);
  check_lon(lon2);
  const double kRadiusKm = 6371.0;
  const double deg = M_PI / 180.0;
  double phi1 = lat1 * deg, phi2 = lat2 * deg;
  double dphi = (lat2 - lat1) * deg;
  double dlam = (lon2 - lon1) * deg;
  double s1 = std::sin(0.5 * dphi), s2 = std::sin(0.5 * dlam);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  if (h > 1.0) h = 1.0;
  return 2.0 * kRadiusKm * std::asin(std::sqrt(h));
}

}  // namespace sdkrylov
