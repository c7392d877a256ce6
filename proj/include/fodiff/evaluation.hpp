// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fodiff/fod_image.hpp"
#include "fodiff/spharm.hpp"

/// Restoration metrics: per-order RMSE, peak angular differences, L=0
/// integrity, severity grouping and the variant comparison tables.
namespace fodiff::eval {

/// RMSE per order (index 0..4 for L = 0..8) and over all 45 volumes.
struct OrderRmse {
  std::array<double, sh::kNumOrders> per_order{};
  double overall = 0.0;
};

/// Pools squared errors over several images before taking roots.
class RmseAccumulator {
public:
  void add(const FodImage& gt, const FodImage& restored, const VoxelMask& mask);
  /// Throws InvalidArgument when no voxel was added.
  OrderRmse result() const;

private:
  std::array<double, sh::kNumOrders> sq_{}, comp_{};
  std::size_t voxels_ = 0;
};

/// Over voxels where `mask` is set. Throws InvalidArgument for an empty mask
/// or mismatched images.
OrderRmse rmse_per_order(const FodImage& gt, const FodImage& restored, const VoxelMask& mask);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0; ///< population standard deviation
  std::size_t count = 0;
};

struct AngularReport {
  std::optional<MeanStd> first, second;
  std::size_t voxels = 0;
  std::size_t first_excluded = 0;  ///< gt has no peak or restored has none
  std::size_t second_excluded = 0; ///< gt has no second peak or restored has none
};

/// Accumulates per-voxel angular differences; several images may be added.
class AngularAccumulator {
public:
  explicit AngularAccumulator(const sh::Tessellation& tess, double threshold = 0.5);
  void add(const FodImage& gt, const FodImage& restored, const VoxelMask& mask);
  AngularReport report() const;

private:
  const sh::Tessellation* tess_;
  sh::PeakOptions opts_;
  std::vector<double> first_, second_;
  std::size_t voxels_ = 0, first_excluded_ = 0, second_excluded_ = 0;
};

AngularReport angular_report(const FodImage& gt, const FodImage& restored, const VoxelMask& mask,
                             const sh::Tessellation& tess, double threshold = 0.5);

/// Mean L=0 coefficient over the roi. Throws InvalidArgument for an empty roi.
double integrity(const FodImage& image, const VoxelMask& roi);

/// Screening thresholds for cohort selection.
struct ScreeningFilter {
  double max_signal_loss = 0.25;
  double min_integrity = 0.09;
  bool accepts(double signal_loss, double integrity_value) const
  {
    return signal_loss < max_signal_loss && integrity_value > min_integrity;
  }
};

struct SeverityRecord {
  std::string id;
  double severity = 0.0;
  double integrity_before = 0.0;
  double integrity_after = 0.0;
};

struct Distribution {
  double mean = 0.0, std = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0;
};

Distribution describe(std::vector<double> values);

struct SeverityGroup {
  std::vector<std::string> ids;
  double severity_min = 0.0, severity_max = 0.0;
  Distribution before, after;
};

/// Sizes of n contiguous groups over `count` records, remainder to the earliest groups.
std::vector<std::size_t> group_sizes(std::size_t count, int n_groups);

/// Stable sort by severity, then contiguous groups as `group_sizes`.
std::vector<SeverityGroup> severity_grouping(std::vector<SeverityRecord> records, int n_groups = 5);

/// Max minus min of group means.
double group_spread(const std::vector<SeverityGroup>& groups, bool after);

/// One variant's row in the comparison tables.
struct ComparisonRow {
  std::string variant;
  OrderRmse rmse;
  AngularReport angular;
};

/// Table-1 layout: variant, L=0, L=2, L=4, L=6, L=8, FODs (tab separated).
std::string rmse_table(const std::vector<ComparisonRow>& rows);
/// Table-2 layout: variant, 1st peak mean, std, 2nd peak mean, std, counts.
std::string angular_table(const std::vector<ComparisonRow>& rows);

} // namespace fodiff::eval
