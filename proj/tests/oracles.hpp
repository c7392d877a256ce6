// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference computations used to derive expected test values.
// None of these call into the library's numerical routines.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// three-term recurrence.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w)
{
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15)
        break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

/// Product quadrature on the unit sphere: Gauss-Legendre in cos(theta) and the
/// trapezoid rule in phi. Exact for polynomials of degree < min(2 n_theta, n_phi).
struct SphereQuadrature {
  Eigen::MatrixX3d dirs;
  Eigen::VectorXd weights;
};

inline SphereQuadrature sphere_quadrature(int n_theta, int n_phi)
{
  std::vector<double> x, w;
  gauss_legendre(n_theta, x, w);
  SphereQuadrature q;
  q.dirs.resize(n_theta * n_phi, 3);
  q.weights.resize(n_theta * n_phi);
  int r = 0;
  for (int i = 0; i < n_theta; ++i)
    for (int j = 0; j < n_phi; ++j, ++r) {
      const double phi = 2.0 * std::numbers::pi * j / n_phi;
      const double st = std::sqrt(std::max(0.0, 1.0 - x[i] * x[i]));
      q.dirs.row(r) << st * std::cos(phi), st * std::sin(phi), x[i];
      q.weights[r] = w[i] * 2.0 * std::numbers::pi / n_phi;
    }
  return q;
}

/// Closed-form real harmonics of order 2 (no Condon-Shortley phase), in the
/// order m = -2..2.
inline Eigen::Matrix<double, 5, 1> order2(const Eigen::Vector3d& d)
{
  const double x = d.x(), y = d.y(), z = d.z();
  const double c = std::sqrt(15.0 / std::numbers::pi);
  Eigen::Matrix<double, 5, 1> out;
  out << 0.5 * c * x * y, 0.5 * c * y * z, 0.25 * std::sqrt(5.0 / std::numbers::pi) * (3 * z * z - 1),
      0.5 * c * x * z, 0.25 * c * (x * x - y * y);
  return out;
}

/// Watson density exp(k (d.u)^2) normalised to unit mass, by 1-D quadrature of
/// its normaliser: Z = 4 pi Int_0^1 exp(k t^2) dt.
inline double watson_density(const Eigen::Vector3d& d, const Eigen::Vector3d& axis, double kappa)
{
  std::vector<double> x, w;
  gauss_legendre(200, x, w);
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    z += w[i] * std::exp(kappa * x[i] * x[i]);
  z *= 2.0 * std::numbers::pi; // Int over t in [-1, 1] times 2 pi
  const double t = d.normalized().dot(axis.normalized());
  return std::exp(kappa * t * t) / z;
}

/// Central-difference derivative of f at x along coordinate i.
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                 Eigen::Index i, double h)
{
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

/// Peaks by a global scan: every direction of a dense set is tested against
/// all directions within `neighbour_deg` (axis angle); local maxima above the
/// threshold are ranked and suppressed within `exclusion_deg` of stronger ones.
struct DensePeaks {
  std::vector<Eigen::Vector3d> directions;
  std::vector<double> amplitudes;
};

inline DensePeaks dense_scan_peaks(const Eigen::MatrixX3d& dirs, const Eigen::VectorXd& amp, double threshold,
                                   double neighbour_deg, double exclusion_deg, int max_peaks)
{
  const double cos_nb = std::cos(neighbour_deg * std::numbers::pi / 180.0);
  const double cos_ex = std::cos(exclusion_deg * std::numbers::pi / 180.0);
  std::vector<int> cand;
  for (Eigen::Index i = 0; i < dirs.rows(); ++i) {
    if (!(amp[i] > threshold))
      continue;
    bool is_max = true;
    for (Eigen::Index j = 0; j < dirs.rows() && is_max; ++j)
      if (j != i && std::abs(dirs.row(i).dot(dirs.row(j))) >= cos_nb && amp[j] >= amp[i])
        is_max = false;
    if (is_max)
      cand.push_back(static_cast<int>(i));
  }
  std::sort(cand.begin(), cand.end(), [&](int a, int b) { return amp[a] > amp[b]; });
  DensePeaks out;
  for (int c : cand) {
    if (static_cast<int>(out.directions.size()) >= max_peaks)
      break;
    const Eigen::Vector3d d = dirs.row(c).transpose();
    bool suppressed = false;
    for (const auto& k : out.directions)
      if (std::abs(k.dot(d)) > cos_ex)
        suppressed = true;
    if (!suppressed) {
      out.directions.push_back(d);
      out.amplitudes.push_back(amp[c]);
    }
  }
  return out;
}

/// Fibonacci lattice on the upper hemisphere (antipodal representatives).
inline Eigen::MatrixX3d fibonacci_hemisphere(int n)
{
  Eigen::MatrixX3d d(n, 3);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (i + 0.5) / n;
    const double r = std::sqrt(1.0 - z * z);
    d.row(i) << r * std::cos(golden * i), r * std::sin(golden * i), z;
  }
  return d;
}

/// Exact v for data x0 ~ N(mu, sigma0^2 I) at noise level abar: the posterior
/// mean E[x0 | x_t] by Gaussian conditioning, converted to v.
inline Eigen::VectorXd gaussian_data_v(const Eigen::VectorXd& x_t, const Eigen::VectorXd& mu, double sigma0,
                                       double abar)
{
  const double a = std::sqrt(abar), s = std::sqrt(1.0 - abar);
  const double gain = a * sigma0 * sigma0 / (abar * sigma0 * sigma0 + s * s);
  const Eigen::VectorXd x0 = mu + gain * (x_t - a * mu);
  return (a * x_t - x0) / s;
}

/// Gaussian posterior q(x_{t-1} | x_t, x0) by conditioning the two-step chain
/// x_{t-1} ~ N(sqrt(abar_prev) x0, 1 - abar_prev), x_t ~ N(sqrt(1 - beta) x_{t-1}, beta).
inline std::pair<double, double> chain_posterior(double x_t, double x0, double abar_prev, double beta)
{
  const double alpha = 1.0 - beta;
  const double precision = 1.0 / (1.0 - abar_prev) + alpha / beta;
  const double var = 1.0 / precision;
  const double mean = var * (std::sqrt(abar_prev) * x0 / (1.0 - abar_prev) + std::sqrt(alpha) * x_t / beta);
  return {mean, var};
}

inline double axis_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b)
{
  const double c = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return std::acos(c) * 180.0 / std::numbers::pi;
}

} // namespace oracle
