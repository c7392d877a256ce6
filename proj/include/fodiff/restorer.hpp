// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/diffusion.hpp"
#include "fodiff/fod_image.hpp"
#include "fodiff/prepared.hpp"
#include "fodiff/trainer.hpp"

/// Inference: per-volume ancestral sampling inside the distortion mask, tiled
/// over the mask's neighbourhood, then spliced into the observed image.
namespace fodiff::restore {

/// Tile layout covering the mask bounding box. A box that fits one tile gets a
/// single tile centred on it; larger boxes get tiles overlapping by `overlap`.
/// Every tile has the model's inference edge length.
std::vector<Box3> plan_tiles(const Box3& mask_box, const Grid3& grid, int tile, int overlap);

/// Per-tile inputs that do not change while sampling: crops and the
/// cross-attention key/value maps derived from the condition data.
struct TileContext {
  Box3 box;
  Eigen::MatrixXf condition; ///< 45 x n
  Eigen::MatrixXf mask;      ///< 1 x n
  std::vector<nn::Var<float>> kv;
};

std::vector<TileContext> build_tiles(const train::Model& model, const PreparedImage& image);

/// Generated normalised values of volume `flat` for every voxel of the tile
/// union, as a 1 x grid.size() row (zero outside the tiles). Starts from
/// Gaussian noise and runs ddpm_step for t = T..1.
Eigen::RowVectorXf restore_volume(const train::Model& model, const PreparedImage& image,
                                  const std::vector<TileContext>& tiles, int flat,
                                  const diffusion::NoiseSchedule& sched, Rng& rng);

struct RestoreOptions {
  int steps = 250;      ///< sampling steps; the 1000-step schedule is respaced when smaller
  int timesteps = 1000; ///< training schedule length
  std::uint64_t seed = 0;
  int workers = 1;
};

/// All 45 volumes, each with the stream split_rng(seed, flat). Output equals
/// `corrupted` outside the mask and the denormalised generation inside it.
FodImage restore_image(const FodImage& corrupted, const VoxelMask& mask, const train::Model& model,
                       const RestoreOptions& options);

} // namespace fodiff::restore
