// SPDX-License-Identifier: Apache-2.0
#include "fodiff/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace fodiff::eval {

namespace {

void check_pair(const FodImage& gt, const FodImage& restored, const VoxelMask& mask, const char* who)
{
  if (!(gt.grid == restored.grid) || gt.coeffs.rows() != restored.coeffs.rows() ||
      gt.coeffs.cols() != restored.coeffs.cols())
    throw InvalidArgument(std::string(who) + ": image dimensions differ");
  if (mask.size() != gt.grid.size())
    throw InvalidArgument(std::string(who) + ": mask does not match the image grid");
}

/// Kahan-compensated accumulation.
void kahan_add(double& sum, double& comp, double x)
{
  const double y = x - comp;
  const double t = sum + y;
  comp = (t - sum) - y;
  sum = t;
}

MeanStd mean_std(const std::vector<double>& xs)
{
  MeanStd m;
  m.count = xs.size();
  double sum = 0.0, comp = 0.0;
  for (double x : xs)
    kahan_add(sum, comp, x);
  m.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0, cs = 0.0;
  for (double x : xs)
    kahan_add(ss, cs, (x - m.mean) * (x - m.mean));
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

double quantile_sorted(const std::vector<double>& xs, double q)
{
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

} // namespace

void RmseAccumulator::add(const FodImage& gt, const FodImage& restored, const VoxelMask& mask)
{
  check_pair(gt, restored, mask, "rmse_per_order");
  for (Eigen::Index v = 0; v < gt.grid.size(); ++v) {
    if (!mask[v])
      continue;
    ++voxels_;
    for (int f = 0; f < sh::kNumCoeffs; ++f) {
      const double d = static_cast<double>(restored.coeffs(f, v)) - static_cast<double>(gt.coeffs(f, v));
      const int o = sh::order_of(f) / 2;
      kahan_add(sq_[o], comp_[o], d * d);
    }
  }
}

OrderRmse RmseAccumulator::result() const
{
  if (voxels_ == 0)
    throw InvalidArgument("rmse_per_order: empty mask");
  OrderRmse r;
  double total = 0.0;
  for (int o = 0; o < sh::kNumOrders; ++o) {
    const int l = 2 * o;
    r.per_order[o] = std::sqrt(sq_[o] / static_cast<double>(voxels_ * (2 * l + 1)));
    total += sq_[o];
  }
  r.overall = std::sqrt(total / static_cast<double>(voxels_ * sh::kNumCoeffs));
  return r;
}

OrderRmse rmse_per_order(const FodImage& gt, const FodImage& restored, const VoxelMask& mask)
{
  RmseAccumulator acc;
  acc.add(gt, restored, mask);
  return acc.result();
}

AngularAccumulator::AngularAccumulator(const sh::Tessellation& tess, double threshold) : tess_(&tess)
{
  opts_.amp_threshold = threshold;
}

void AngularAccumulator::add(const FodImage& gt, const FodImage& restored, const VoxelMask& mask)
{
  check_pair(gt, restored, mask, "angular_report");
  for (Eigen::Index v = 0; v < gt.grid.size(); ++v) {
    if (!mask[v])
      continue;
    ++voxels_;
    const Eigen::VectorXd g = gt.coeffs.col(v).cast<double>();
    const Eigen::VectorXd r = restored.coeffs.col(v).cast<double>();
    const auto d = sh::angular_difference(sh::extract_peaks(g, *tess_, opts_), sh::extract_peaks(r, *tess_, opts_));
    if (d.first)
      first_.push_back(*d.first);
    else
      ++first_excluded_;
    if (d.second)
      second_.push_back(*d.second);
    else
      ++second_excluded_;
  }
}

AngularReport AngularAccumulator::report() const
{
  AngularReport r;
  r.voxels = voxels_;
  r.first_excluded = first_excluded_;
  r.second_excluded = second_excluded_;
  if (!first_.empty())
    r.first = mean_std(first_);
  if (!second_.empty())
    r.second = mean_std(second_);
  return r;
}

AngularReport angular_report(const FodImage& gt, const FodImage& restored, const VoxelMask& mask,
                             const sh::Tessellation& tess, double threshold)
{
  AngularAccumulator acc(tess, threshold);
  acc.add(gt, restored, mask);
  return acc.report();
}

double integrity(const FodImage& image, const VoxelMask& roi)
{
  if (roi.size() != image.grid.size())
    throw InvalidArgument("integrity: roi does not match the image grid");
  double sum = 0.0, comp = 0.0;
  std::size_t n = 0;
  for (Eigen::Index v = 0; v < image.grid.size(); ++v)
    if (roi[v]) {
      kahan_add(sum, comp, image.coeffs(0, v));
      ++n;
    }
  if (n == 0)
    throw InvalidArgument("integrity: empty roi");
  return sum / static_cast<double>(n);
}

Distribution describe(std::vector<double> values)
{
  if (values.empty())
    throw InvalidArgument("describe: no values");
  Distribution d;
  const MeanStd m = mean_std(values);
  d.mean = m.mean;
  d.std = m.std;
  std::sort(values.begin(), values.end());
  d.q1 = quantile_sorted(values, 0.25);
  d.median = quantile_sorted(values, 0.5);
  d.q3 = quantile_sorted(values, 0.75);
  return d;
}

std::vector<std::size_t> group_sizes(std::size_t count, int n_groups)
{
  if (n_groups < 1)
    throw InvalidArgument("severity_grouping: need at least one group");
  if (count < static_cast<std::size_t>(n_groups))
    throw InvalidArgument("severity_grouping: " + std::to_string(count) + " records cannot fill " +
                          std::to_string(n_groups) + " groups");
  const std::size_t n = static_cast<std::size_t>(n_groups);
  std::vector<std::size_t> sizes(n, count / n);
  for (std::size_t i = 0; i < count % n; ++i)
    ++sizes[i];
  return sizes;
}

std::vector<SeverityGroup> severity_grouping(std::vector<SeverityRecord> records, int n_groups)
{
  const auto sizes = group_sizes(records.size(), n_groups);
  std::stable_sort(records.begin(), records.end(),
                   [](const SeverityRecord& a, const SeverityRecord& b) { return a.severity < b.severity; });
  std::vector<SeverityGroup> groups;
  std::size_t at = 0;
  for (std::size_t size : sizes) {
    SeverityGroup g;
    std::vector<double> before, after;
    for (std::size_t i = at; i < at + size; ++i) {
      g.ids.push_back(records[i].id);
      before.push_back(records[i].integrity_before);
      after.push_back(records[i].integrity_after);
    }
    g.severity_min = records[at].severity;
    g.severity_max = records[at + size - 1].severity;
    g.before = describe(before);
    g.after = describe(after);
    groups.push_back(std::move(g));
    at += size;
  }
  return groups;
}

double group_spread(const std::vector<SeverityGroup>& groups, bool after)
{
  if (groups.empty())
    throw InvalidArgument("group_spread: no groups");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& g : groups) {
    const double m = after ? g.after.mean : g.before.mean;
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  return hi - lo;
}

std::string rmse_table(const std::vector<ComparisonRow>& rows)
{
  std::ostringstream os;
  os << "variant\tL=0\tL=2\tL=4\tL=6\tL=8\tFODs\n";
  os << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.variant;
    for (double x : r.rmse.per_order)
      os << '\t' << x;
    os << '\t' << r.rmse.overall << '\n';
  }
  return os.str();
}

std::string angular_table(const std::vector<ComparisonRow>& rows)
{
  std::ostringstream os;
  os << "variant\tpeak1_mean_deg\tpeak1_std_deg\tpeak2_mean_deg\tpeak2_std_deg\tvoxels\tpeak1_excluded\tpeak2_"
        "excluded\n";
  os << std::fixed << std::setprecision(3);
  const auto cell = [&](const std::optional<MeanStd>& m) {
    if (m)
      os << '\t' << m->mean << '\t' << m->std;
    else
      os << "\t-\t-";
  };
  for (const auto& r : rows) {
    os << r.variant;
    cell(r.angular.first);
    cell(r.angular.second);
    os << '\t' << r.angular.voxels << '\t' << r.angular.first_excluded << '\t' << r.angular.second_excluded << '\n';
  }
  return os.str();
}

} // namespace fodiff::eval
