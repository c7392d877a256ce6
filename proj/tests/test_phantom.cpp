// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numbers>

#include "fodiff/phantom.hpp"
#include "fodiff/spharm.hpp"
#include "oracles.hpp"

using namespace fodiff;

namespace {

/// Projection of weight * Watson(axis, kappa) onto the basis by sphere quadrature.
Eigen::VectorXd projected(const Eigen::Vector3d& axis, double kappa, double weight)
{
  const auto q = oracle::sphere_quadrature(80, 160);
  Eigen::VectorXd f(q.dirs.rows());
  for (Eigen::Index i = 0; i < f.size(); ++i)
    f[i] = weight * oracle::watson_density(q.dirs.row(i).transpose(), axis, kappa);
  return sh::spharm_basis(q.dirs).transpose() * q.weights.cwiseProduct(f);
}

const double kUnitMassC0 = 1.0 / std::sqrt(4.0 * std::numbers::pi);

} // namespace

TEST_CASE("fibre coefficients match quadrature projection of the Watson density")
{
  const std::array<double, 3> kappas{5.0, 40.0, 120.0};
  for (double kappa : kappas) {
    const Eigen::Vector3d axis = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
    const auto c = phantom::fiber_to_coeffs({axis, 0.7, kappa});
    const Eigen::VectorXd ref = projected(axis, kappa, 0.7);
    CHECK((c - ref).cwiseAbs().maxCoeff() < 1e-6);

    // Order 0 and 2 against closed forms, independent of the library basis.
    CHECK(c[0] == doctest::Approx(0.7 * kUnitMassC0).epsilon(1e-9));
    const auto q = oracle::sphere_quadrature(80, 160);
    Eigen::Matrix<double, 5, 1> o2 = Eigen::Matrix<double, 5, 1>::Zero();
    for (Eigen::Index i = 0; i < q.dirs.rows(); ++i) {
      const Eigen::Vector3d d = q.dirs.row(i).transpose();
      o2 += q.weights[i] * 0.7 * oracle::watson_density(d, axis, kappa) * oracle::order2(d);
    }
    CHECK((c.segment<5>(1) - o2).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(phantom::fiber_to_coeffs({Eigen::Vector3d::UnitZ(), 1.0, 4.0}), InvalidArgument);
  CHECK_THROWS_AS(phantom::fiber_to_coeffs({Eigen::Vector3d::UnitZ(), 0.0, 40.0}), InvalidArgument);
}

TEST_CASE("isotropic density has only an order-0 term")
{
  const auto c = phantom::isotropic_coeffs(1.0);
  CHECK(c[0] == doctest::Approx(kUnitMassC0).epsilon(1e-12));
  CHECK(c.tail(44).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noise-free phantom carries unit mass in every brain voxel")
{
  phantom::PhantomConfig pc;
  pc.noise_sigma = 0.0;
  pc.seed = 4;
  const auto ph = phantom::make_phantom(pc);
  std::array<int, 5> region_count{};
  for (Eigen::Index v = 0; v < ph.image.grid.size(); ++v) {
    ++region_count[static_cast<int>(ph.regions[static_cast<std::size_t>(v)])];
    if (ph.image.brain[v])
      CHECK(ph.image.coeffs(0, v) == doctest::Approx(kUnitMassC0).epsilon(1e-6));
    else
      CHECK(ph.image.coeffs.col(v).cwiseAbs().maxCoeff() == 0.0f);
  }
  for (int r = 1; r < 5; ++r)
    CHECK(region_count[r] > 0);
  CHECK(ph.crossing_deg >= 45.0);
  CHECK(ph.crossing_deg <= 90.0);
  CHECK(oracle::axis_angle_deg(ph.fiber_a.direction, ph.fiber_b.direction) ==
        doctest::Approx(ph.crossing_deg).epsilon(1e-6));
  CHECK_NOTHROW(ph.image.validate());
}

TEST_CASE("phantoms are deterministic in the seed")
{
  phantom::PhantomConfig pc;
  pc.seed = 9;
  const auto a = phantom::make_phantom(pc);
  const auto b = phantom::make_phantom(pc);
  CHECK((a.image.coeffs.array() == b.image.coeffs.array()).all());
  pc.seed = 10;
  const auto c = phantom::make_phantom(pc);
  CHECK(!(a.image.coeffs.array() == c.image.coeffs.array()).all());

  pc.noise_sigma = 0.1;
  CHECK_THROWS_AS(phantom::make_phantom(pc), InvalidArgument);
}

TEST_CASE("signal loss lowers in-mask integrity monotonically and leaves the rest untouched")
{
  phantom::PhantomConfig pc;
  pc.seed = 2;
  const auto ph = phantom::make_phantom(pc);
  const Eigen::Vector3d centre(12, 12, 12);
  double previous = INFINITY;
  for (double s : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
    const auto m = phantom::ball_mask(ph.image, centre, 3.0, s);
    Rng rng = split_rng(1, 0);
    const FodImage out = phantom::apply_signal_loss(ph.image, m, rng);
    double sum = 0.0;
    int n = 0;
    for (Eigen::Index v = 0; v < out.grid.size(); ++v) {
      if (m.mask[v]) {
        sum += out.coeffs(0, v);
        ++n;
        CHECK(out.coeffs(0, v) == doctest::Approx(ph.image.coeffs(0, v) * (1.0 - 0.9 * s)).epsilon(1e-6));
      } else {
        CHECK((out.coeffs.col(v).array() == ph.image.coeffs.col(v).array()).all());
      }
    }
    REQUIRE(n > 0);
    CHECK(sum / n < previous);
    previous = sum / n;
    if (s == 0.0)
      CHECK((out.coeffs.array() == ph.image.coeffs.array()).all());
  }
}

TEST_CASE("masks are clipped to the brain")
{
  phantom::PhantomConfig pc;
  const auto ph = phantom::make_phantom(pc);
  const auto m = phantom::ball_mask(ph.image, Eigen::Vector3d(0, 0, 0), 6.0, 0.5);
  for (Eigen::Index v = 0; v < m.mask.size(); ++v)
    if (m.mask[v])
      CHECK(ph.image.brain[v]);
  CHECK_THROWS_AS(phantom::ball_mask(ph.image, Eigen::Vector3d(12, 12, 12), 3.0, 1.5), InvalidArgument);

  phantom::DistortionMask outside{ph.image.grid, VoxelMask::Zero(ph.image.grid.size()), 0.5};
  outside.mask[0] = 1;
  Rng rng = split_rng(0, 0);
  CHECK_THROWS_AS(phantom::apply_signal_loss(ph.image, outside, rng), InvalidArgument);
}

TEST_CASE("samples are reproducible from their item seed")
{
  phantom::DatasetSpec spec;
  const auto a = phantom::make_sample(spec, 77, 0.6);
  const auto b = phantom::make_sample(spec, 77, 0.6);
  CHECK((a.corrupted.coeffs.array() == b.corrupted.coeffs.array()).all());
  CHECK((a.mask.mask == b.mask.mask).all());
  CHECK(a.mask.mask.cast<int>().sum() > 0);
  CHECK(a.mask.severity == 0.6);
}
