// SPDX-License-Identifier: Apache-2.0
#include "fodiff/fod_image.hpp"

#include <algorithm>
#include <cmath>

namespace fodiff {

void FodImage::validate() const
{
  if (coeffs.rows() != sh::kNumCoeffs || coeffs.cols() != grid.size())
    throw InvalidArgument("FodImage: coefficient matrix does not match grid");
  if (brain.size() != grid.size())
    throw InvalidArgument("FodImage: brain mask does not match grid");
  if (!coeffs.allFinite())
    throw InvalidArgument("FodImage: non-finite coefficients");
  for (Eigen::Index v = 0; v < grid.size(); ++v)
    if (!brain[v] && (coeffs.col(v).array() != 0.0f).any())
      throw InvalidArgument("FodImage: non-zero coefficients outside the brain mask at voxel " +
                            std::to_string(v));
}

VoxelMask nonzero_voxels(const Eigen::MatrixXf& coeffs)
{
  VoxelMask m(coeffs.cols());
  for (Eigen::Index v = 0; v < coeffs.cols(); ++v)
    m[v] = (coeffs.col(v).array() != 0.0f).any() ? 1 : 0;
  return m;
}

Box3 bounding_box(const VoxelMask& mask, const Grid3& grid)
{
  Box3 b;
  b.lo = {grid.nx, grid.ny, grid.nz};
  b.hi = {0, 0, 0};
  for (int i = 0; i < grid.nx; ++i)
    for (int j = 0; j < grid.ny; ++j)
      for (int k = 0; k < grid.nz; ++k)
        if (mask[grid.index(i, j, k)]) {
          const std::array<int, 3> p{i, j, k};
          for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], p[a]);
            b.hi[a] = std::max(b.hi[a], p[a] + 1);
          }
        }
  if (b.hi[0] == 0)
    return Box3{};
  return b;
}

ScaleTable compute_scale_table(const std::vector<FodImage>& training_images)
{
  if (training_images.empty())
    throw InvalidArgument("compute_scale_table: empty training set");
  std::array<double, sh::kNumOrders> mx{};
  mx.fill(0.0);
  bool first_l0 = true;
  for (const auto& img : training_images) {
    if ((img.brain == 0).all())
      throw InvalidArgument("compute_scale_table: image with empty brain mask");
    for (Eigen::Index v = 0; v < img.grid.size(); ++v) {
      if (!img.brain[v])
        continue;
      const double l0 = img.coeffs(0, v);
      mx[0] = first_l0 ? l0 : std::max(mx[0], l0);
      first_l0 = false;
      for (int f = 1; f < sh::kNumCoeffs; ++f) {
        const int o = sh::order_of(f) / 2;
        mx[o] = std::max(mx[o], static_cast<double>(std::abs(img.coeffs(f, v))));
      }
    }
  }
  ScaleTable t;
  for (int o = 0; o < sh::kNumOrders; ++o)
    t.scale[o] = std::max(mx[o], kMinScale);
  return t;
}

namespace {

FodImage rescale(const FodImage& image, const ScaleTable& table, bool divide)
{
  FodImage out = image;
  for (int f = 0; f < sh::kNumCoeffs; ++f) {
    const double s = table.for_volume(f);
    if (divide)
      out.coeffs.row(f) = (image.coeffs.row(f).cast<double>() / s).cast<float>();
    else
      out.coeffs.row(f) = (image.coeffs.row(f).cast<double>() * s).cast<float>();
  }
  return out;
}

} // namespace

FodImage normalize(const FodImage& image, const ScaleTable& table)
{
  return rescale(image, table, true);
}

FodImage denormalize(const FodImage& image, const ScaleTable& table)
{
  return rescale(image, table, false);
}

} // namespace fodiff
