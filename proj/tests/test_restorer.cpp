// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>

#include "fodiff/restorer.hpp"
#include "toy_model.hpp"

using namespace fodiff;
using namespace fodiff::restore;

namespace {

struct Scene {
  phantom::Sample sample;
  train::Model model;
};

Scene toy_scene(net::Variant variant = net::Variant::full)
{
  phantom::DatasetSpec spec;
  spec.phantom.dims = Grid3{12, 12, 12};
  spec.phantom.bundle_radius = 3.0;
  spec.mask_radius = 2.0;
  Scene s{phantom::make_sample(spec, 99, 0.7), {}};
  s.model = train::make_model(test::toy_config(), variant, compute_scale_table({s.sample.truth.image}), 4);
  return s;
}

bool bit_equal(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b)
{
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

RestoreOptions quick(std::uint64_t seed)
{
  RestoreOptions o;
  o.steps = 10;
  o.seed = seed;
  return o;
}

} // namespace

TEST_CASE("tile plans cover the mask box with fixed-size tiles inside the grid")
{
  const Grid3 g{20, 16, 12};
  const auto one = plan_tiles(Box3{{5, 5, 5}, {9, 8, 7}}, g, 8, 2);
  REQUIRE(one.size() == 1);
  CHECK(one[0].lo == std::array<int, 3>{3, 2, 2});

  const Box3 wide{{1, 2, 3}, {19, 15, 10}};
  const auto tiles = plan_tiles(wide, g, 8, 2);
  CHECK(tiles.size() > 1);
  for (int i = wide.lo[0]; i < wide.hi[0]; ++i)
    for (int j = wide.lo[1]; j < wide.hi[1]; ++j)
      for (int k = wide.lo[2]; k < wide.hi[2]; ++k) {
        bool covered = false;
        for (const auto& t : tiles)
          covered |= i >= t.lo[0] && i < t.hi[0] && j >= t.lo[1] && j < t.hi[1] && k >= t.lo[2] && k < t.hi[2];
        CHECK(covered);
      }
  for (const auto& t : tiles) {
    CHECK(t.extent() == Grid3{8, 8, 8});
    CHECK(t.lo[0] >= 0);
    CHECK(t.hi[2] <= g.nz);
  }
  CHECK(plan_tiles(Box3{}, g, 8, 2).empty());
  CHECK_THROWS_AS(plan_tiles(wide, g, 13, 2), InvalidArgument);
}

TEST_CASE("restoration splices only inside the mask")
{
  const Scene s = toy_scene();
  const FodImage& in = s.sample.corrupted;
  const VoxelMask& mask = s.sample.mask.mask;
  const FodImage out = restore_image(in, mask, s.model, quick(1));
  REQUIRE(out.grid == in.grid);
  int inside = 0;
  for (Eigen::Index v = 0; v < in.grid.size(); ++v) {
    if (mask[v]) {
      ++inside;
      CHECK(out.coeffs.col(v).allFinite());
      // Generated values are clipped to 1.5 in normalised units.
      for (int f = 0; f < sh::kNumCoeffs; ++f)
        CHECK(std::abs(out.coeffs(f, v)) <= 1.5 * s.model.scale.for_volume(f) * (1 + 1e-6) + 1e-12);
    } else {
      CHECK(std::memcmp(out.coeffs.col(v).data(), in.coeffs.col(v).data(), sizeof(float) * 45) == 0);
    }
  }
  CHECK(inside > 0);
  CHECK(!bit_equal(out.coeffs, in.coeffs));
  CHECK((out.brain == in.brain).all());
}

TEST_CASE("an empty mask returns the input unchanged")
{
  const Scene s = toy_scene();
  const VoxelMask none = VoxelMask::Zero(s.sample.corrupted.grid.size());
  const FodImage out = restore_image(s.sample.corrupted, none, s.model, quick(1));
  CHECK(bit_equal(out.coeffs, s.sample.corrupted.coeffs));
}

TEST_CASE("restoration is deterministic in the seed and independent of worker count")
{
  for (auto variant : {net::Variant::uncond, net::Variant::full}) {
    const Scene s = toy_scene(variant);
    const auto& in = s.sample.corrupted;
    const auto& mask = s.sample.mask.mask;
    const FodImage a = restore_image(in, mask, s.model, quick(5));
    const FodImage b = restore_image(in, mask, s.model, quick(5));
    RestoreOptions threaded = quick(5);
    threaded.workers = 3;
    const FodImage c = restore_image(in, mask, s.model, threaded);
    const FodImage d = restore_image(in, mask, s.model, quick(6));
    CHECK(bit_equal(a.coeffs, b.coeffs));
    CHECK(bit_equal(a.coeffs, c.coeffs));
    CHECK(!bit_equal(a.coeffs, d.coeffs));
  }
}

TEST_CASE("invalid restoration inputs are rejected")
{
  const Scene s = toy_scene();
  VoxelMask small = VoxelMask::Ones(5);
  CHECK_THROWS_AS(restore_image(s.sample.corrupted, small, s.model, quick(1)), InvalidArgument);
  RestoreOptions bad = quick(1);
  bad.steps = 2000;
  CHECK_THROWS_AS(restore_image(s.sample.corrupted, s.sample.mask.mask, s.model, bad), InvalidArgument);
}
