// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/data_store.hpp"
#include "fodiff/fod_image.hpp"
#include "fodiff/random.hpp"

/// Normalised, network-ready view of one image: condition volumes with the
/// mask fill applied, their per-order averages, and the target when known.
namespace fodiff {

struct PreparedImage {
  std::string id;
  double severity = 0.0;
  Grid3 grid;
  Eigen::MatrixXf target;    ///< 45 x N normalised ground truth; empty at inference
  Eigen::MatrixXf condition; ///< 45 x N normalised corrupted data, masked voxels set to 1
  Eigen::MatrixXf order_avg; ///< 5 x N per-order means of `condition`
  Eigen::RowVectorXf mask;   ///< 1 x N in {0, 1}
  Box3 mask_box;
};

/// `gt` may be null when no target exists.
PreparedImage prepare_image(const FodImage& corrupted, const VoxelMask& mask, const ScaleTable& table,
                            const FodImage* gt = nullptr, std::string id = {}, double severity = 0.0);

std::vector<PreparedImage> prepare_items(const std::vector<io::LoadedItem>& items, const ScaleTable& table);

/// Edge-`size` cube inside `grid` containing `box` when possible. Placement is
/// uniform over the valid offsets when `rng` is given and centred otherwise.
Box3 patch_around(const Box3& box, const Grid3& grid, int size, Rng* rng);

} // namespace fodiff
