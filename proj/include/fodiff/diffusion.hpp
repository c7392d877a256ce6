// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/errors.hpp"
#include "fodiff/random.hpp"

/// DDPM mathematics in v-parameterisation.
///
/// With a = sqrt(abar_t), s = sqrt(1 - abar_t):
///   x_t = a x0 + s eps,   v = a eps - s x0,
///   x0  = a x_t - s v,    eps = s x_t + a v.
namespace fodiff::diffusion {

/// Diffusion timestep constants. Index 0 is the clean state (abar = 1); steps
/// run 1..T. `model_t[t]` is the timestep fed to the denoiser, which differs
/// from t only for respaced schedules.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;      ///< size T+1, beta[0] = 0
  std::vector<double> alpha_bar; ///< size T+1, alpha_bar[0] = 1
  std::vector<int> model_t;      ///< size T+1

  void check_step(int t) const
  {
    if (t < 1 || t > T)
      throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(T) + "]");
  }

  /// Sub-schedule over `steps` evenly spaced timesteps of this one, with
  /// betas recomputed so the cumulative products match at the kept steps.
  NoiseSchedule respaced(int steps) const;
};

/// beta linearly spaced from beta_start (t = 1) to beta_end (t = T).
NoiseSchedule linear_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

template <class D1, class D2>
typename D1::PlainObject q_sample(const Eigen::MatrixBase<D1>& x0, int t,
                                  const Eigen::MatrixBase<D2>& eps, const NoiseSchedule& s)
{
  s.check_step(t);
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw InvalidArgument("q_sample: x0 and eps shapes differ");
  using S = typename D1::Scalar;
  const S a = static_cast<S>(std::sqrt(s.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - s.alpha_bar[t]));
  return a * x0 + b * eps;
}

template <class D1, class D2>
typename D1::PlainObject v_target(const Eigen::MatrixBase<D1>& x0, const Eigen::MatrixBase<D2>& eps,
                                  int t, const NoiseSchedule& s)
{
  s.check_step(t);
  using S = typename D1::Scalar;
  const S a = static_cast<S>(std::sqrt(s.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - s.alpha_bar[t]));
  return a * eps - b * x0;
}

template <class D1, class D2>
typename D1::PlainObject predict_x0_from_v(const Eigen::MatrixBase<D1>& x_t,
                                           const Eigen::MatrixBase<D2>& v, int t,
                                           const NoiseSchedule& s)
{
  s.check_step(t);
  using S = typename D1::Scalar;
  const S a = static_cast<S>(std::sqrt(s.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - s.alpha_bar[t]));
  return a * x_t - b * v;
}

template <class D1, class D2>
typename D1::PlainObject predict_eps_from_v(const Eigen::MatrixBase<D1>& x_t,
                                            const Eigen::MatrixBase<D2>& v, int t,
                                            const NoiseSchedule& s)
{
  s.check_step(t);
  using S = typename D1::Scalar;
  const S a = static_cast<S>(std::sqrt(s.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - s.alpha_bar[t]));
  return b * x_t + a * v;
}

inline constexpr double kX0Clip = 1.5;

/// One ancestral step x_t -> x_{t-1}: the posterior q(x_{t-1} | x_t, x0_hat)
/// with x0_hat = clip(predict_x0_from_v, +-1.5) and the lower-bound variance
/// beta_t (1 - abar_{t-1}) / (1 - abar_t). No noise is added at t = 1.
template <class D1, class D2>
typename D1::PlainObject ddpm_step(const Eigen::MatrixBase<D1>& x_t, const Eigen::MatrixBase<D2>& v_pred,
                                   int t, Rng& rng, const NoiseSchedule& s)
{
  s.check_step(t);
  using S = typename D1::Scalar;
  using Plain = typename D1::PlainObject;
  const Plain x0 = predict_x0_from_v(x_t, v_pred, t, s)
                       .unaryExpr([](S x) { return std::clamp<S>(x, S(-kX0Clip), S(kX0Clip)); });
  const double ab = s.alpha_bar[t];
  const double ab_prev = s.alpha_bar[t - 1];
  const double beta = s.beta[t];
  const S c0 = static_cast<S>(std::sqrt(ab_prev) * beta / (1.0 - ab));
  const S ct = static_cast<S>(std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab));
  Plain out = c0 * x0 + ct * x_t;
  if (t > 1) {
    const S sigma = static_cast<S>(std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)));
    Plain z(x_t.rows(), x_t.cols());
    fill_gaussian(z, rng);
    out += sigma * z;
  }
  return out;
}

inline constexpr double kLossBase = 0.01;
inline constexpr double kLossMaskBonus = 0.99;

/// 0.01 mean|pred - target| + 0.99 mean(mask * |pred - target|); both means run
/// over all elements.
template <class D1, class D2, class D3>
double masked_weighted_l1(const Eigen::MatrixBase<D1>& pred, const Eigen::MatrixBase<D2>& target,
                          const Eigen::MatrixBase<D3>& mask)
{
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || pred.rows() != mask.rows() ||
      pred.cols() != mask.cols())
    throw InvalidArgument("masked_weighted_l1: shape mismatch");
  const auto diff = (pred.template cast<double>() - target.template cast<double>()).cwiseAbs();
  const double n = static_cast<double>(pred.size());
  return kLossBase * diff.sum() / n +
         kLossMaskBonus * diff.cwiseProduct(mask.template cast<double>()).sum() / n;
}

} // namespace fodiff::diffusion
