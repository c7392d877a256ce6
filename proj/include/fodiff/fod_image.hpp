// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/spharm.hpp"

namespace fodiff {

/// Voxel grid extents. Voxels are addressed in C order: (i * ny + j) * nz + k.
struct Grid3 {
  int nx = 0, ny = 0, nz = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(nx) * ny * nz; }
  Eigen::Index index(int i, int j, int k) const
  {
    return (static_cast<Eigen::Index>(i) * ny + j) * nz + k;
  }
  bool contains(int i, int j, int k) const
  {
    return i >= 0 && j >= 0 && k >= 0 && i < nx && j < ny && k < nz;
  }
  friend bool operator==(const Grid3&, const Grid3&) = default;
};

using VoxelMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// 4D SPHARM image. Coefficients are a 45 x N matrix (column-major), which is
/// the X x Y x Z x 45 C-order layout of the on-disk payload.
struct FodImage {
  Grid3 grid;
  Eigen::Vector3d voxel_size = Eigen::Vector3d::Ones();
  Eigen::MatrixXf coeffs;
  VoxelMask brain;

  FodImage() = default;
  explicit FodImage(Grid3 g)
      : grid(g), coeffs(Eigen::MatrixXf::Zero(sh::kNumCoeffs, g.size())),
        brain(VoxelMask::Zero(g.size()))
  {
  }

  /// Throws InvalidArgument when coefficients are non-finite, shapes disagree,
  /// or a voxel outside the brain mask carries a non-zero coefficient.
  void validate() const;
};

/// Voxels carrying any non-zero coefficient.
VoxelMask nonzero_voxels(const Eigen::MatrixXf& coeffs);

/// Axis-aligned voxel box [lo, hi) per axis.
struct Box3 {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};
  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  Grid3 extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
};

/// Bounding box of the set voxels of `mask`; empty when none are set.
Box3 bounding_box(const VoxelMask& mask, const Grid3& grid);

/// Copy columns of `full` (C x grid.size()) inside `box` into a C x box.size() matrix.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
crop(const Eigen::DenseBase<Derived>& full, const Grid3& grid, const Box3& box)
{
  const Grid3 ext = box.extent();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(full.rows(),
                                                                             ext.size());
  for (int i = 0; i < ext.nx; ++i)
    for (int j = 0; j < ext.ny; ++j)
      for (int k = 0; k < ext.nz; ++k)
        out.col(ext.index(i, j, k)) =
            full.col(grid.index(box.lo[0] + i, box.lo[1] + j, box.lo[2] + k));
  return out;
}

/// Per-order normalisation constants (scale-only, zero maps to zero).
struct ScaleTable {
  std::array<double, sh::kNumOrders> scale{1, 1, 1, 1, 1};

  double for_order(int l) const { return scale.at(l / 2); }
  double for_volume(int flat) const { return for_order(sh::order_of(flat)); }
  friend bool operator==(const ScaleTable&, const ScaleTable&) = default;
};

inline constexpr double kMinScale = 1e-8;

/// scale[0] = max L=0 coefficient over brain voxels, scale[l>0] = max |coeff|
/// over the order's volumes; each clamped below by 1e-8.
ScaleTable compute_scale_table(const std::vector<FodImage>& training_images);

FodImage normalize(const FodImage& image, const ScaleTable& table);
FodImage denormalize(const FodImage& image, const ScaleTable& table);

} // namespace fodiff
