// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "fodiff/diffusion.hpp"
#include "oracles.hpp"

using namespace fodiff;
using namespace fodiff::diffusion;

TEST_CASE("linear schedule endpoints and cumulative products")
{
  const auto s = linear_schedule();
  CHECK(s.T == 1000);
  CHECK(s.beta[1] == doctest::Approx(1e-4));
  CHECK(s.beta[1000] == doctest::Approx(0.02));
  CHECK(s.alpha_bar[0] == 1.0);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
  }
  CHECK_THROWS_AS(s.check_step(0), InvalidArgument);
  CHECK_THROWS_AS(s.check_step(1001), InvalidArgument);
  CHECK_THROWS_AS(linear_schedule(10, 0.1, 0.01), InvalidArgument);
}

TEST_CASE("v-parameterisation round-trips")
{
  const auto s = linear_schedule();
  Rng rng = split_rng(3, 0);
  for (int t : {1, 2, 10, 250, 500, 999, 1000}) {
    Eigen::MatrixXf x0(4, 16), eps(4, 16);
    fill_gaussian(x0, rng);
    fill_gaussian(eps, rng);
    const Eigen::MatrixXf xt = q_sample(x0, t, eps, s);
    const Eigen::MatrixXf v = v_target(x0, eps, t, s);
    CHECK((predict_x0_from_v(xt, v, t, s) - x0).cwiseAbs().maxCoeff() < 1e-5f);
    CHECK((predict_eps_from_v(xt, v, t, s) - eps).cwiseAbs().maxCoeff() < 1e-5f);
  }
  Eigen::MatrixXf a(2, 2), b(2, 3);
  CHECK_THROWS_AS(q_sample(a, 5, b, s), InvalidArgument);
}

TEST_CASE("q_sample moments by Monte Carlo")
{
  const auto s = linear_schedule();
  Rng rng = split_rng(4, 0);
  for (int t : {50, 500, 1000}) {
    const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(200000, 0.5);
    Eigen::VectorXd eps(x0.size());
    fill_gaussian(eps, rng);
    const Eigen::VectorXd xt = q_sample(x0, t, eps, s);
    const double mean = xt.mean();
    const double var = (xt.array() - mean).square().sum() / static_cast<double>(xt.size() - 1);
    const double se = std::sqrt((1.0 - s.alpha_bar[t]) / static_cast<double>(xt.size()));
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar[t]) * 0.5) < 5.0 * se);
    CHECK(std::abs(var / (1.0 - s.alpha_bar[t]) - 1.0) < 0.02);
  }
}

TEST_CASE("masked weighted L1 edge cases")
{
  const Eigen::MatrixXf target = Eigen::MatrixXf::Constant(3, 5, 0.75f);
  const Eigen::MatrixXf pred = target.array() + 0.25f;
  const Eigen::MatrixXf ones = Eigen::MatrixXf::Ones(3, 5);
  const Eigen::MatrixXf zeros = Eigen::MatrixXf::Zero(3, 5);
  CHECK(masked_weighted_l1(target, target, ones) == 0.0);
  CHECK(masked_weighted_l1(pred, target, ones) == 0.25);
  CHECK(masked_weighted_l1(pred, target, zeros) == 0.01 * 0.25);
  Eigen::MatrixXf half = zeros;
  half.leftCols(2).setOnes();
  const double expected = 0.01 * 0.25 + 0.99 * 0.25 * 6.0 / 15.0;
  CHECK(masked_weighted_l1(pred, target, half) == doctest::Approx(expected).epsilon(1e-15));
  CHECK_THROWS_AS(masked_weighted_l1(pred, target, Eigen::MatrixXf::Ones(3, 4)), InvalidArgument);
}

TEST_CASE("respaced schedules keep cumulative products at the kept steps")
{
  const auto s = linear_schedule();
  const auto r = s.respaced(250);
  CHECK(r.T == 250);
  for (int k = 1; k <= 250; ++k) {
    CHECK(r.model_t[k] == 4 * k);
    CHECK(r.alpha_bar[k] == doctest::Approx(s.alpha_bar[4 * k]).epsilon(1e-12));
    double prod = 1.0;
    if (k == 250) {
      for (int j = 1; j <= 250; ++j)
        prod *= 1.0 - r.beta[j];
      CHECK(prod == doctest::Approx(s.alpha_bar[1000]).epsilon(1e-9));
    }
  }
  const auto same = s.respaced(1000);
  for (int t = 1; t <= 1000; ++t)
    CHECK(same.beta[t] == doctest::Approx(s.beta[t]).epsilon(1e-9));
  CHECK(same.model_t == s.model_t);
  CHECK_THROWS_AS(s.respaced(0), InvalidArgument);
  CHECK_THROWS_AS(s.respaced(1001), InvalidArgument);
}

TEST_CASE("ancestral step matches the Gaussian chain posterior")
{
  const auto s = linear_schedule();
  Rng rng = split_rng(5, 0);
  for (int t : {2, 100, 700}) {
    const int n = 200000;
    const double x0 = 0.3, xt_val = -0.4;
    const Eigen::VectorXd xt = Eigen::VectorXd::Constant(n, xt_val);
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    // v that makes the predicted x0 equal to `x0`.
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(n, (a * xt_val - x0) / b);
    const Eigen::VectorXd out = ddpm_step(xt, v, t, rng, s);
    const auto [mean, var] = oracle::chain_posterior(xt_val, x0, s.alpha_bar[t - 1], s.beta[t]);
    const double m = out.mean();
    const double vv = (out.array() - m).square().sum() / (n - 1);
    CHECK(m == doctest::Approx(mean).epsilon(1e-3).scale(1.0));
    CHECK(std::abs(vv / var - 1.0) < 0.02);
  }
}

TEST_CASE("final step is deterministic and predictions are clipped")
{
  const auto s = linear_schedule();
  Rng rng = split_rng(6, 0);
  Eigen::VectorXd xt(3);
  xt << 0.2, -0.1, 0.05;
  const double a = std::sqrt(s.alpha_bar[1]), b = std::sqrt(1.0 - s.alpha_bar[1]);
  const Eigen::VectorXd x0 = Eigen::Vector3d(0.7, -0.2, 5.0);
  const Eigen::VectorXd v = (a * xt - x0) / b;
  const Eigen::VectorXd out = ddpm_step(xt, v, 1, rng, s);
  CHECK(out[0] == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(out[1] == doctest::Approx(-0.2).epsilon(1e-9));
  CHECK(out[2] == doctest::Approx(kX0Clip).epsilon(1e-9));
}

TEST_CASE("sampling with the exact denoiser recovers a toy signal")
{
  const auto s = linear_schedule();
  Rng rng = split_rng(7, 0);
  Eigen::VectorXd mu(64);
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    mu[i] = std::sin(0.3 * static_cast<double>(i));
  const double sigma0 = 0.002;
  Eigen::VectorXd x(mu.size());
  fill_gaussian(x, rng);
  for (int t = s.T; t >= 1; --t)
    x = ddpm_step(x, oracle::gaussian_data_v(x, mu, sigma0, s.alpha_bar[t]), t, rng, s);
  CHECK((x - mu).cwiseAbs().maxCoeff() < 0.02);
}
