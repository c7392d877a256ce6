// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numbers>
#include <set>

#include "fodiff/fod_image.hpp"
#include "fodiff/phantom.hpp"
#include "fodiff/spharm.hpp"
#include "oracles.hpp"

using namespace fodiff;

TEST_CASE("volume index table enumerates orders then m")
{
  const auto t8 = sh::volume_index_table(8);
  CHECK(t8.size() == 45);
  std::array<int, 5> counts{};
  std::set<int> flats;
  for (std::size_t i = 0; i < t8.size(); ++i) {
    CHECK(t8[i].flat == static_cast<int>(i));
    ++counts[t8[i].order / 2];
    flats.insert(t8[i].flat);
  }
  CHECK(counts == std::array<int, 5>{1, 5, 9, 13, 17});
  CHECK(flats.size() == 45);

  const auto t0 = sh::volume_index_table(0);
  REQUIRE(t0.size() == 1);
  CHECK(t0[0].flat == 0);

  const auto t4 = sh::volume_index_table(4);
  CHECK(t4.size() == 15);
  CHECK(t4[6].order == 4);
  CHECK(t4[6].m_index == 0);

  CHECK_THROWS_AS(sh::volume_index_table(3), InvalidArgument);
  CHECK_THROWS_AS(sh::volume_index_table(-2), InvalidArgument);
  CHECK(sh::volume_index(44).order == 8);
  CHECK(sh::volume_index(44).m() == 8);
  CHECK_THROWS_AS(sh::volume_index(45), InvalidArgument);
}

TEST_CASE("basis matches closed forms and is antipodally even")
{
  const auto dirs = oracle::fibonacci_hemisphere(50);
  const Eigen::MatrixXd B = sh::spharm_basis(dirs);
  const Eigen::MatrixXd Bneg = sh::spharm_basis(Eigen::MatrixX3d(-dirs));
  CHECK(B.cols() == 45);
  CHECK((B - Bneg).cwiseAbs().maxCoeff() == 0.0);
  for (Eigen::Index d = 0; d < dirs.rows(); ++d) {
    CHECK(B(d, 0) == doctest::Approx(0.5 / std::sqrt(std::numbers::pi)).epsilon(1e-14));
    const auto ref = oracle::order2(dirs.row(d).transpose());
    for (int m = 0; m < 5; ++m)
      CHECK(B(d, 1 + m) == doctest::Approx(ref[m]).epsilon(1e-12));
  }
  Eigen::MatrixX3d bad(1, 3);
  bad << 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(sh::spharm_basis(bad), InvalidArgument);
}

TEST_CASE("basis is orthonormal under sphere quadrature")
{
  // Degree-16 products are integrated exactly by 12 Gauss nodes x 24 azimuths.
  const auto q = oracle::sphere_quadrature(12, 24);
  const Eigen::MatrixXd B = sh::spharm_basis(q.dirs);
  const Eigen::MatrixXd gram = B.transpose() * q.weights.asDiagonal() * B;
  CHECK((gram - Eigen::MatrixXd::Identity(45, 45)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gram matrix on the level-5 icosphere is near identity")
{
  const auto tess = sh::Tessellation::icosphere(5, false);
  CHECK(tess.size() == 10242);
  const Eigen::MatrixXd& B = tess.basis();
  CHECK(tess.weights().sum() == doctest::Approx(4.0 * std::numbers::pi).epsilon(1e-3));
  const Eigen::MatrixXd gram = B.transpose() * tess.weights().asDiagonal() * B;
  Eigen::MatrixXd off = gram;
  off.diagonal().setZero();
  CHECK(off.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("level-4 antipodal tessellation")
{
  const auto tess = sh::Tessellation::icosphere(4);
  CHECK(tess.size() == 1281);
  CHECK(tess.resolution_deg() > 2.0);
  CHECK(tess.resolution_deg() < 3.0);
  // Covering radius: random directions are never farther from the vertex set.
  Rng rng = split_rng(5, 0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d d = Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng)).normalized();
    const double best = (tess.vertices() * d).cwiseAbs().maxCoeff();
    CHECK(std::acos(std::min(1.0, best)) * 180.0 / std::numbers::pi <= tess.resolution_deg() + 1e-9);
  }
  for (Eigen::Index v = 0; v < tess.size(); ++v)
    CHECK(tess.neighbours()[static_cast<std::size_t>(v)].size() >= 5);
}

TEST_CASE("evaluate_fod")
{
  const auto dirs = oracle::fibonacci_hemisphere(20);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(45);
  CHECK(sh::evaluate_fod(c, dirs).cwiseAbs().maxCoeff() == 0.0);
  c[0] = 3.0;
  const Eigen::VectorXd a = sh::evaluate_fod(c, dirs);
  CHECK((a.array() - 3.0 / (2.0 * std::sqrt(std::numbers::pi))).abs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(sh::evaluate_fod(Eigen::VectorXd::Zero(44), dirs), InvalidArgument);

  const auto tess = sh::Tessellation::icosphere(4);
  const auto z = phantom::fiber_to_coeffs({Eigen::Vector3d::UnitZ(), 1.0, 40.0});
  const Eigen::VectorXd amp = sh::evaluate_fod(z, tess.vertices());
  Eigen::Index best;
  amp.maxCoeff(&best);
  CHECK(oracle::axis_angle_deg(tess.vertices().row(best).transpose(), Eigen::Vector3d::UnitZ()) < 3.0);
}

TEST_CASE("scale table and normalisation")
{
  FodImage a(Grid3{2, 1, 1});
  a.brain << 1, 1;
  a.coeffs(0, 0) = 0.5;
  a.coeffs(0, 1) = 0.25;
  a.coeffs(1, 0) = -0.3;
  a.coeffs(2, 1) = 0.2;
  ScaleTable t = compute_scale_table({a});
  CHECK(t.scale[0] == 0.5);
  CHECK(t.scale[1] == doctest::Approx(0.3).epsilon(1e-7));
  CHECK(t.scale[3] == kMinScale);

  FodImage b = a;
  b.coeffs(1, 0) = 0.0;
  b.coeffs(2, 1) = 0.2f;
  FodImage c = a;
  c.coeffs(1, 0) = 0.0;
  c.coeffs(2, 1) = -0.3f;
  CHECK(compute_scale_table({b, c}).scale[1] == doctest::Approx(0.3).epsilon(1e-7));
  CHECK_THROWS_AS(compute_scale_table({}), InvalidArgument);

  const FodImage n = normalize(a, t);
  CHECK(n.coeffs(0, 0) == 1.0f);
  CHECK(n.coeffs(5, 0) == 0.0f);

  phantom::PhantomConfig pc;
  pc.seed = 3;
  const auto ph = phantom::make_phantom(pc);
  const ScaleTable pt = compute_scale_table({ph.image});
  const FodImage back = denormalize(normalize(ph.image, pt), pt);
  const Eigen::ArrayXXf rel = (back.coeffs - ph.image.coeffs).array().abs() /
                              ph.image.coeffs.array().abs().max(1e-30f);
  CHECK(rel.maxCoeff() < 1e-6);
  CHECK((back.coeffs.array() == 0.0f).count() == (ph.image.coeffs.array() == 0.0f).count());
}

TEST_CASE("peaks of single and crossing fibres")
{
  const auto tess = sh::Tessellation::icosphere(4);
  const Eigen::VectorXd z = phantom::fiber_to_coeffs({Eigen::Vector3d::UnitZ(), 1.0, 40.0});
  const auto p1 = sh::extract_peaks(z, tess);
  REQUIRE(p1.size() == 1);
  CHECK(oracle::axis_angle_deg(p1.directions[0], Eigen::Vector3d::UnitZ()) < 3.0);
  CHECK(p1.amplitudes[0] >= 0.5);
  CHECK(p1.directions[0].norm() == doctest::Approx(1.0).epsilon(1e-6));

  const Eigen::VectorXd cross = 0.5 * phantom::fiber_to_coeffs({Eigen::Vector3d::UnitX(), 1.0, 40.0}) +
                                0.5 * phantom::fiber_to_coeffs({Eigen::Vector3d::UnitZ(), 1.0, 40.0});
  const auto p2 = sh::extract_peaks(cross, tess);
  REQUIRE(p2.size() == 2);
  const double dx = std::min(oracle::axis_angle_deg(p2.directions[0], Eigen::Vector3d::UnitX()),
                             oracle::axis_angle_deg(p2.directions[1], Eigen::Vector3d::UnitX()));
  const double dz = std::min(oracle::axis_angle_deg(p2.directions[0], Eigen::Vector3d::UnitZ()),
                             oracle::axis_angle_deg(p2.directions[1], Eigen::Vector3d::UnitZ()));
  CHECK(dx < 3.0);
  CHECK(dz < 3.0);
  CHECK(oracle::axis_angle_deg(p2.directions[0], p2.directions[1]) >= 25.0);
  CHECK(p2.amplitudes[0] >= p2.amplitudes[1]);

  CHECK(sh::extract_peaks(Eigen::VectorXd::Zero(45), tess).empty());
  CHECK_THROWS_AS(sh::extract_peaks(Eigen::VectorXd::Zero(44), tess), InvalidArgument);
}

TEST_CASE("peaks agree with the dense-scan oracle on random two-fibre voxels")
{
  const auto tess = sh::Tessellation::icosphere(4);
  const auto dense = oracle::fibonacci_hemisphere(20000);
  Rng rng = split_rng(11, 0);
  int agree = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    Eigen::Vector3d u1(gaussian(rng), gaussian(rng), gaussian(rng));
    Eigen::Vector3d u2(gaussian(rng), gaussian(rng), gaussian(rng));
    const Eigen::VectorXd c = 0.5 * phantom::fiber_to_coeffs({u1.normalized(), 1.0, uniform(rng, 20, 60)}) +
                              0.5 * phantom::fiber_to_coeffs({u2.normalized(), 1.0, uniform(rng, 20, 60)});
    const Eigen::VectorXd amp = sh::spharm_basis(dense) * c;
    const auto ref = oracle::dense_scan_peaks(dense, amp, 0.5, 2.5, 25.0, 3);
    const auto got = sh::extract_peaks(c, tess);
    bool ok = ref.directions.size() == got.size();
    for (std::size_t k = 0; ok && k < got.size(); ++k)
      ok = oracle::axis_angle_deg(ref.directions[k], got.directions[k]) < tess.resolution_deg();
    agree += ok;
  }
  CHECK(agree >= 19);
}

TEST_CASE("angular difference")
{
  sh::PeakSet a;
  a.directions = {Eigen::Vector3d::UnitZ(), Eigen::Vector3d::UnitX()};
  a.amplitudes = {2.0, 1.0};
  auto d = sh::angular_difference(a, a);
  CHECK(*d.first == 0.0);
  CHECK(*d.second == 0.0);

  sh::PeakSet flipped = a;
  flipped.directions[0] = -flipped.directions[0];
  d = sh::angular_difference(a, flipped);
  CHECK(*d.first == 0.0);

  sh::PeakSet gx;
  gx.directions = {Eigen::Vector3d::UnitX()};
  gx.amplitudes = {1.0};
  sh::PeakSet ry;
  ry.directions = {Eigen::Vector3d::UnitY()};
  ry.amplitudes = {1.0};
  d = sh::angular_difference(gx, ry);
  CHECK(*d.first == doctest::Approx(90.0));
  CHECK(!d.second);
  CHECK(!sh::angular_difference(gx, sh::PeakSet{}).first);
}
