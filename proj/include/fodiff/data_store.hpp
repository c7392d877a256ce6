// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fodiff/fod_image.hpp"
#include "fodiff/phantom.hpp"

/// On-disk formats.
///
/// FOD container (.fodc) and mask container (.fodm) share one framing, all
/// integers little-endian:
///
///   offset 0   4 bytes   magic "FODC" / "FODM"
///   offset 4   u16       format version (1)
///   offset 6   u32       header length H
///   offset 10  H bytes   header text, one "key: value" per line
///   offset 10+H          payload
///
/// FOD payload: float32, C order, X x Y x Z x 45. Header keys: dims, n_volumes,
/// lmax, voxel_size, dtype (float32le).
/// Mask payload: uint8 in {0, 1}, C order, X x Y x Z. Header keys: dims, dtype (uint8).
///
/// Brain masks are not stored; readers recover them as the voxels carrying a
/// non-zero coefficient.
namespace fodiff::io {

inline constexpr std::uint16_t kFormatVersion = 1;

void write_fod(const std::filesystem::path& path, const FodImage& image);
FodImage read_fod(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const VoxelMask& mask, const Grid3& grid);
/// Returns the mask and fills `grid`.
VoxelMask read_mask(const std::filesystem::path& path, Grid3& grid);

void write_scale_table(const std::filesystem::path& path, const ScaleTable& table);
ScaleTable read_scale_table(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Eigen::MatrixXf value;
};

/// Generic checkpoint: JSON metadata plus float32 tensors.
///
///   "FODK", u16 version, u32 header length, JSON header, tensor payloads
///
/// The header lists each tensor's name and shape in payload order.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Eigen::MatrixXf& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a of a byte string, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);
std::string file_digest(const std::filesystem::path& path);

struct Manifest {
  std::filesystem::path directory; ///< paths in items are relative to this
  nlohmann::json raw;
  std::vector<phantom::DatasetItem> items;

  std::vector<phantom::DatasetItem> split(const std::string& name) const;
  std::filesystem::path resolve(const std::string& relative) const { return directory / relative; }
};

void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// An item loaded from disk.
struct LoadedItem {
  phantom::DatasetItem meta;
  FodImage gt;
  FodImage corrupted;
  VoxelMask mask;
};

LoadedItem load_item(const Manifest& manifest, const phantom::DatasetItem& item);
std::vector<LoadedItem> load_split(const Manifest& manifest, const std::string& split);

} // namespace fodiff::io
