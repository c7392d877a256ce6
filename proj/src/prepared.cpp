// SPDX-License-Identifier: Apache-2.0
#include "fodiff/prepared.hpp"

#include <algorithm>

#include "fodiff/denoiser.hpp"

namespace fodiff {

PreparedImage prepare_image(const FodImage& corrupted, const VoxelMask& mask, const ScaleTable& table,
                            const FodImage* gt, std::string id, double severity)
{
  if (mask.size() != corrupted.grid.size())
    throw InvalidArgument("prepare_image: mask does not match the image grid");
  if (gt && !(gt->grid == corrupted.grid))
    throw InvalidArgument("prepare_image: ground truth and corrupted grids differ");
  PreparedImage p;
  p.id = std::move(id);
  p.severity = severity;
  p.grid = corrupted.grid;
  p.mask = mask.cast<float>().matrix().transpose();
  p.condition = normalize(corrupted, table).coeffs;
  for (Eigen::Index v = 0; v < p.grid.size(); ++v)
    if (mask[v])
      p.condition.col(v).setOnes();
  p.order_avg = net::order_average(p.condition);
  if (gt)
    p.target = normalize(*gt, table).coeffs;
  p.mask_box = bounding_box(mask, p.grid);
  return p;
}

std::vector<PreparedImage> prepare_items(const std::vector<io::LoadedItem>& items, const ScaleTable& table)
{
  std::vector<PreparedImage> out;
  out.reserve(items.size());
  for (const auto& it : items)
    out.push_back(prepare_image(it.corrupted, it.mask, table, &it.gt, it.meta.id, it.meta.severity));
  return out;
}

Box3 patch_around(const Box3& box, const Grid3& grid, int size, Rng* rng)
{
  const std::array<int, 3> dims{grid.nx, grid.ny, grid.nz};
  Box3 out;
  for (int a = 0; a < 3; ++a) {
    if (size > dims[a])
      throw InvalidArgument("patch_around: patch of " + std::to_string(size) + " exceeds grid extent " +
                            std::to_string(dims[a]));
    int lo_min = 0, lo_max = dims[a] - size;
    if (!box.empty()) {
      // Offsets keeping the box inside the patch; when the box is wider than
      // the patch, fall back to centring on it.
      const int want_min = box.hi[a] - size;
      const int want_max = box.lo[a];
      if (want_min <= want_max) {
        lo_min = std::max(lo_min, want_min);
        lo_max = std::min(lo_max, want_max);
      } else {
        const int c = (box.lo[a] + box.hi[a] - size) / 2;
        lo_min = lo_max = std::clamp(c, 0, dims[a] - size);
      }
    }
    int lo;
    if (rng)
      lo = uniform_int(*rng, lo_min, lo_max);
    else
      lo = (lo_min + lo_max) / 2;
    out.lo[a] = lo;
    out.hi[a] = lo + size;
  }
  return out;
}

} // namespace fodiff
