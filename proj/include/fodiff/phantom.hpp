// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/fod_image.hpp"
#include "fodiff/random.hpp"

/// Synthetic crossing-fibre phantoms with known geometry, and a parametric
/// signal-loss model applied inside distortion masks.
namespace fodiff::phantom {

/// One axially symmetric fibre population: weight * Watson(direction, concentration).
struct FiberSpec {
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double weight = 1.0;
  double concentration = 50.0; ///< kappa, in [5, 200]
};

/// SPHARM coefficients (lmax 8) of weight * exp(k (d.u)^2) / Z, where Z
/// normalises the density to unit mass on the sphere. The expansion uses the
/// Funk-Hecke theorem: c_lm = 2 pi Int_{-1}^{1} g(t) P_l(t) dt * Y_lm(u), with
/// the 1-D integral done by composite Simpson quadrature.
Eigen::Matrix<double, sh::kNumCoeffs, 1> fiber_to_coeffs(const FiberSpec& spec);

/// Coefficients of an isotropic density of the given total mass.
Eigen::Matrix<double, sh::kNumCoeffs, 1> isotropic_coeffs(double weight);

enum class Region : std::uint8_t { outside = 0, isotropic = 1, bundle_a = 2, bundle_b = 3, crossing = 4 };

struct PhantomConfig {
  Grid3 dims{24, 24, 24};
  double brain_radius_fraction = 0.46; ///< ellipsoid semi-axes as a fraction of dims
  double bundle_radius = 5.0;          ///< tube radius in voxels
  double crossing_min_deg = 45.0;
  double crossing_max_deg = 90.0;
  double kappa_min = 20.0;
  double kappa_max = 60.0;
  double noise_sigma = 0.01; ///< must be < 0.1
  std::uint64_t seed = 0;

  void validate() const;
};

/// Phantom image plus the geometry it was built from.
struct Phantom {
  FodImage image;
  std::vector<Region> regions;
  FiberSpec fiber_a, fiber_b;
  Eigen::Vector3d centre;
  double crossing_deg = 0.0;
};

/// Two straight tubular bundles through the centre crossing at an angle in
/// [crossing_min, crossing_max]; other brain voxels hold an isotropic density.
/// Every brain voxel carries unit total mass. Deterministic in `config.seed`.
Phantom make_phantom(const PhantomConfig& config);

struct DistortionMask {
  Grid3 grid;
  VoxelMask mask;
  double severity = 0.0; ///< in [0, 1]
};

/// Ball of radius `radius` (voxels) centred at `centre`, clipped to the brain.
DistortionMask ball_mask(const FodImage& image, const Eigen::Vector3d& centre, double radius,
                         double severity);

/// Inside the mask: L=0 scaled by (1 - 0.9 s), higher orders by (1 - 0.95 s),
/// then higher orders perturbed by N(0, (noise_level * s * m_l)^2), where m_l is
/// the largest |coefficient| of order l inside the mask. L=0 receives no noise,
/// so its in-mask mean strictly decreases for s > 0. Voxels outside the mask
/// are untouched.
FodImage apply_signal_loss(const FodImage& image, const DistortionMask& mask, Rng& rng,
                           double noise_level = 0.05);

struct DatasetItem {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
  double severity = 0.0;
  std::string gt_path, corrupted_path, mask_path; ///< relative to the manifest directory
};

struct DatasetSpec {
  int n_train = 32, n_val = 4, n_test = 8;
  PhantomConfig phantom;
  double mask_radius = 3.0;
  double severity_min = 0.2, severity_max = 1.0;
  std::uint64_t seed = 0;
};

/// Generates every item, writes gt/corrupted/mask containers under `out_dir`
/// and a manifest `manifest.json`. Returns the manifest path.
std::filesystem::path make_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// One generated item, in memory.
struct Sample {
  Phantom truth;
  FodImage corrupted;
  DistortionMask mask;
};

/// The item make_dataset writes for a given per-item seed and severity.
Sample make_sample(const DatasetSpec& spec, std::uint64_t item_seed, double severity);

} // namespace fodiff::phantom
