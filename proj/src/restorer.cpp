// SPDX-License-Identifier: Apache-2.0
#include "fodiff/restorer.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace fodiff::restore {

namespace {

std::vector<int> axis_starts(int lo, int hi, int dim, int tile, int overlap)
{
  std::vector<int> out;
  if (hi - lo <= tile) {
    out.push_back(std::clamp((lo + hi - tile) / 2, 0, dim - tile));
    return out;
  }
  const int stride = std::max(1, tile - overlap);
  for (int s = lo;; s += stride) {
    const int start = std::min(s, hi - tile);
    out.push_back(std::clamp(start, 0, dim - tile));
    if (start >= hi - tile)
      break;
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

} // namespace

std::vector<Box3> plan_tiles(const Box3& mask_box, const Grid3& grid, int tile, int overlap)
{
  if (mask_box.empty())
    return {};
  const std::array<int, 3> dims{grid.nx, grid.ny, grid.nz};
  std::array<std::vector<int>, 3> starts;
  for (int a = 0; a < 3; ++a) {
    if (tile > dims[a])
      throw InvalidArgument("plan_tiles: tile edge " + std::to_string(tile) + " exceeds grid extent " +
                            std::to_string(dims[a]));
    starts[a] = axis_starts(mask_box.lo[a], mask_box.hi[a], dims[a], tile, overlap);
  }
  std::vector<Box3> tiles;
  for (int i : starts[0])
    for (int j : starts[1])
      for (int k : starts[2]) {
        Box3 b;
        b.lo = {i, j, k};
        b.hi = {i + tile, j + tile, k + tile};
        tiles.push_back(b);
      }
  return tiles;
}

std::vector<TileContext> build_tiles(const train::Model& model, const PreparedImage& image)
{
  nn::NoGradGuard no_grad;
  std::vector<TileContext> out;
  for (const Box3& b : plan_tiles(image.mask_box, image.grid, model.config.inference_patch,
                                  model.config.tile_overlap)) {
    TileContext tc;
    tc.box = b;
    tc.condition = crop(image.condition, image.grid, b);
    tc.mask = crop(image.mask, image.grid, b);
    if (model.config.use_cross_attention) {
      if (!model.copy)
        throw InternalError("restore: cross-attention model without a frozen copy");
      const auto bank = model.copy->extract(*model.net, crop(image.order_avg, image.grid, b), tc.mask, b.extent());
      tc.kv = model.net->combine_bank(bank);
    }
    out.push_back(std::move(tc));
  }
  return out;
}

Eigen::RowVectorXf restore_volume(const train::Model& model, const PreparedImage& image,
                                  const std::vector<TileContext>& tiles, int flat,
                                  const diffusion::NoiseSchedule& sched, Rng& rng)
{
  if (flat < 0 || flat >= sh::kNumCoeffs)
    throw InvalidArgument("restore_volume: volume index out of range");
  nn::NoGradGuard no_grad;
  const Grid3& grid = image.grid;
  // Union of tile voxels in ascending grid order, and each tile's positions in it.
  std::vector<Eigen::Index> pos_of(static_cast<std::size_t>(grid.size()), -1);
  for (const auto& tc : tiles) {
    const Grid3 e = tc.box.extent();
    for (int i = 0; i < e.nx; ++i)
      for (int j = 0; j < e.ny; ++j)
        for (int k = 0; k < e.nz; ++k)
          pos_of[static_cast<std::size_t>(grid.index(tc.box.lo[0] + i, tc.box.lo[1] + j, tc.box.lo[2] + k))] = 0;
  }
  std::vector<Eigen::Index> voxels;
  for (Eigen::Index v = 0; v < grid.size(); ++v)
    if (pos_of[static_cast<std::size_t>(v)] >= 0) {
      pos_of[static_cast<std::size_t>(v)] = static_cast<Eigen::Index>(voxels.size());
      voxels.push_back(v);
    }
  std::vector<std::vector<Eigen::Index>> tile_pos(tiles.size());
  Eigen::RowVectorXf coverage = Eigen::RowVectorXf::Zero(static_cast<Eigen::Index>(voxels.size()));
  for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
    const Box3& b = tiles[ti].box;
    const Grid3 e = b.extent();
    tile_pos[ti].resize(static_cast<std::size_t>(e.size()));
    for (int i = 0; i < e.nx; ++i)
      for (int j = 0; j < e.ny; ++j)
        for (int k = 0; k < e.nz; ++k) {
          const Eigen::Index p = pos_of[static_cast<std::size_t>(grid.index(b.lo[0] + i, b.lo[1] + j, b.lo[2] + k))];
          tile_pos[ti][static_cast<std::size_t>(e.index(i, j, k))] = p;
          coverage[p] += 1.0f;
        }
  }

  const Eigen::Index U = static_cast<Eigen::Index>(voxels.size());
  Eigen::RowVectorXf x(U);
  fill_gaussian(x, rng);
  const sh::VolumeIndex vol = sh::volume_index(flat);
  std::vector<net::ConditionPack<float>> packs;
  for (const auto& tc : tiles)
    packs.push_back(net::pack_condition<float>(tc.condition.row(flat), tc.mask));

  Eigen::RowVectorXf v_sum(U);
  for (int t = sched.T; t >= 1; --t) {
    v_sum.setZero();
    for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
      const auto& pos = tile_pos[ti];
      Eigen::MatrixXf x_tile(1, static_cast<Eigen::Index>(pos.size()));
      for (std::size_t c = 0; c < pos.size(); ++c)
        x_tile(0, static_cast<Eigen::Index>(c)) = x[pos[c]];
      const Eigen::MatrixXf input = model.net->assemble_input(x_tile, packs[ti]);
      const auto v = model.net->forward(input, tiles[ti].box.extent(), sched.model_t[t], vol,
                                        model.config.use_cross_attention ? &tiles[ti].kv : nullptr);
      for (std::size_t c = 0; c < pos.size(); ++c)
        v_sum[pos[c]] += v.value()(0, static_cast<Eigen::Index>(c));
    }
    const Eigen::RowVectorXf v_pred = v_sum.cwiseQuotient(coverage);
    x = diffusion::ddpm_step(x, v_pred, t, rng, sched);
  }

  Eigen::RowVectorXf out = Eigen::RowVectorXf::Zero(grid.size());
  for (Eigen::Index p = 0; p < U; ++p)
    out[voxels[static_cast<std::size_t>(p)]] = x[p];
  return out;
}

FodImage restore_image(const FodImage& corrupted, const VoxelMask& mask, const train::Model& model,
                       const RestoreOptions& options)
{
  if (!model.net)
    throw ConfigError("restore: no model loaded");
  if (mask.size() != corrupted.grid.size())
    throw InvalidArgument("restore: mask does not match the image grid");
  for (double s : model.scale.scale)
    if (!(s >= kMinScale) || !std::isfinite(s))
      throw ConfigError("restore: model carries no valid scale table");
  FodImage out = corrupted;
  if ((mask == 0).all())
    return out;
  const PreparedImage image = prepare_image(corrupted, mask, model.scale);
  const diffusion::NoiseSchedule base = diffusion::linear_schedule(options.timesteps);
  const diffusion::NoiseSchedule sched = options.steps == base.T ? base : base.respaced(options.steps);
  const std::vector<TileContext> tiles = build_tiles(model, image);

  Eigen::MatrixXf generated(sh::kNumCoeffs, corrupted.grid.size());
  const auto run_one = [&](int flat) {
    Rng rng = split_rng(options.seed, static_cast<std::uint64_t>(flat));
    generated.row(flat) = restore_volume(model, image, tiles, flat, sched, rng);
  };
  const int workers = std::clamp(options.workers, 1, sh::kNumCoeffs);
  if (workers == 1) {
    for (int f = 0; f < sh::kNumCoeffs; ++f)
      run_one(f);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int f = next++; f < sh::kNumCoeffs; f = next++) {
          try {
            run_one(f);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure)
              failure = std::current_exception();
          }
        }
      });
    for (auto& th : pool)
      th.join();
    if (failure)
      std::rethrow_exception(failure);
  }

  for (Eigen::Index v = 0; v < corrupted.grid.size(); ++v) {
    if (!mask[v])
      continue;
    for (int f = 0; f < sh::kNumCoeffs; ++f)
      out.coeffs(f, v) = static_cast<float>(generated(f, v) * model.scale.for_volume(f));
  }
  return out;
}

} // namespace fodiff::restore
