// SPDX-License-Identifier: Apache-2.0
#include "fodiff/spharm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

namespace fodiff::sh {

std::vector<VolumeIndex> volume_index_table(int lmax)
{
  if (lmax < 0 || lmax % 2)
    throw InvalidArgument("volume_index_table: lmax must be even and non-negative, got " +
                          std::to_string(lmax));
  std::vector<VolumeIndex> table;
  table.reserve(n_coeffs(lmax));
  for (int l = 0; l <= lmax; l += 2)
    for (int mi = 0; mi <= 2 * l; ++mi)
      table.push_back({l, mi, order_offset(l) + mi});
  return table;
}

VolumeIndex volume_index(int flat)
{
  if (flat < 0 || flat >= kNumCoeffs)
    throw InvalidArgument("volume index out of range: " + std::to_string(flat));
  const int l = order_of(flat);
  return {l, flat - order_offset(l), flat};
}

int order_of(int flat)
{
  int l = 0;
  while (order_offset(l + 2) <= flat)
    l += 2;
  return l;
}

namespace detail {

void check_unit(double x, double y, double z)
{
  const double n = std::sqrt(x * x + y * y + z * z);
  if (!(std::abs(n - 1.0) <= 1e-6))
    throw InvalidArgument("spharm_basis: direction is not unit-norm (norm " + std::to_string(n) +
                          ")");
}

void basis_row(double x, double y, double z, int lmax, double* out)
{
  // Even orders only: evaluate at the upper-hemisphere member of the antipodal
  // pair so that B(d) and B(-d) are bit-identical.
  if (z < 0.0 || (z == 0.0 && (y < 0.0 || (y == 0.0 && x < 0.0)))) {
    x = -x;
    y = -y;
    z = -z;
  }
  const double ct = std::clamp(z, -1.0, 1.0);
  const double phi = std::atan2(y, x);
  for (int l = 0; l <= lmax; l += 2) {
    const int off = order_offset(l);
    const double base = (2.0 * l + 1.0) / (4.0 * std::numbers::pi);
    out[off + l] = std::sqrt(base) * std::legendre(l, ct);
    double ratio = 1.0; // (l-m)!/(l+m)!
    for (int m = 1; m <= l; ++m) {
      ratio /= static_cast<double>((l + m) * (l - m + 1));
      const double p = std::sqrt(2.0 * base * ratio) * std::assoc_legendre(l, m, ct);
      out[off + l + m] = p * std::cos(m * phi);
      out[off + l - m] = p * std::sin(m * phi);
    }
  }
}

} // namespace detail

Eigen::Matrix<double, 1, kNumCoeffs> basis_at(const Eigen::Vector3d& direction)
{
  detail::check_unit(direction.x(), direction.y(), direction.z());
  Eigen::Matrix<double, 1, kNumCoeffs> row;
  detail::basis_row(direction.x(), direction.y(), direction.z(), kLmax, row.data());
  return row;
}

double axis_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b)
{
  const double c = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return std::acos(c) * 180.0 / std::numbers::pi;
}

namespace {

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
};

Mesh icosahedron()
{
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  const double raw[12][3] = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (const auto& v : raw)
    m.vertices.push_back(Eigen::Vector3d(v[0], v[1], v[2]).normalized());
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return m;
}

Mesh subdivide(const Mesh& in)
{
  Mesh out;
  out.vertices = in.vertices;
  std::map<std::pair<int, int>, int> midpoints;
  auto midpoint = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = midpoints.find(key);
    if (it != midpoints.end())
      return it->second;
    out.vertices.push_back((out.vertices[a] + out.vertices[b]).normalized());
    const int idx = static_cast<int>(out.vertices.size()) - 1;
    midpoints.emplace(key, idx);
    return idx;
  };
  for (const auto& f : in.faces) {
    const int ab = midpoint(f[0], f[1]);
    const int bc = midpoint(f[1], f[2]);
    const int ca = midpoint(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({f[1], bc, ab});
    out.faces.push_back({f[2], ca, bc});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

using Key = std::tuple<long long, long long, long long>;

Key rounded(const Eigen::Vector3d& v)
{
  constexpr double q = 1e9;
  return {std::llround(v.x() * q), std::llround(v.y() * q), std::llround(v.z() * q)};
}

// Canonical member of an antipodal pair: first non-zero coordinate (z, y, x) positive.
bool is_canonical(const Eigen::Vector3d& v)
{
  constexpr double eps = 1e-9;
  if (std::abs(v.z()) > eps)
    return v.z() > 0;
  if (std::abs(v.y()) > eps)
    return v.y() > 0;
  return v.x() > 0;
}

} // namespace

Tessellation Tessellation::icosphere(int level, bool antipodal)
{
  if (level < 0 || level > 7)
    throw InvalidArgument("icosphere level must be in [0, 7]");
  Mesh mesh = icosahedron();
  for (int i = 0; i < level; ++i)
    mesh = subdivide(mesh);

  const int n = static_cast<int>(mesh.vertices.size());
  std::vector<std::set<int>> adj(n);
  for (const auto& f : mesh.faces)
    for (int e = 0; e < 3; ++e) {
      adj[f[e]].insert(f[(e + 1) % 3]);
      adj[f[(e + 1) % 3]].insert(f[e]);
    }

  std::vector<int> rep(n);
  std::vector<int> kept;
  if (antipodal) {
    std::map<Key, int> lookup;
    for (int i = 0; i < n; ++i)
      lookup.emplace(rounded(mesh.vertices[i]), i);
    std::vector<int> antipode(n, -1);
    for (int i = 0; i < n; ++i) {
      auto it = lookup.find(rounded(-mesh.vertices[i]));
      if (it == lookup.end())
        throw InternalError("icosphere: vertex without antipode");
      antipode[i] = it->second;
    }
    for (int i = 0; i < n; ++i)
      if (is_canonical(mesh.vertices[i])) {
        rep[i] = static_cast<int>(kept.size());
        kept.push_back(i);
      }
    for (int i = 0; i < n; ++i)
      if (!is_canonical(mesh.vertices[i]))
        rep[i] = rep[antipode[i]];
  } else {
    for (int i = 0; i < n; ++i) {
      rep[i] = i;
      kept.push_back(i);
    }
  }

  Tessellation t;
  const int m = static_cast<int>(kept.size());
  t.vertices_.resize(m, 3);
  for (int r = 0; r < m; ++r)
    t.vertices_.row(r) = mesh.vertices[kept[r]].transpose();

  std::vector<std::set<int>> merged(m);
  for (int i = 0; i < n; ++i)
    for (int j : adj[i])
      if (rep[j] != rep[i])
        merged[rep[i]].insert(rep[j]);
  t.neighbours_.resize(m);
  for (int r = 0; r < m; ++r)
    t.neighbours_[r].assign(merged[r].begin(), merged[r].end());

  // Vertex weights: a third of the spherical area of each incident triangle.
  // Resolution: largest angular circumradius over the triangles.
  t.weights_ = Eigen::VectorXd::Zero(m);
  double cover = 0.0;
  for (const auto& f : mesh.faces) {
    const Eigen::Vector3d& a = mesh.vertices[f[0]];
    const Eigen::Vector3d& b = mesh.vertices[f[1]];
    const Eigen::Vector3d& c = mesh.vertices[f[2]];
    const double excess = 2.0 * std::atan2(std::abs(a.dot(b.cross(c))), 1.0 + a.dot(b) + b.dot(c) + c.dot(a));
    for (int e = 0; e < 3; ++e)
      t.weights_[rep[f[e]]] += excess / 3.0;
    const Eigen::Vector3d centre = ((b - a).cross(c - a)).normalized();
    const Eigen::Vector3d outward = centre.dot(a) < 0 ? Eigen::Vector3d(-centre) : centre;
    cover = std::max(cover, std::acos(std::min(1.0, outward.dot(a))) * 180.0 / std::numbers::pi);
  }
  t.resolution_deg_ = cover;
  t.basis_ = spharm_basis(t.vertices_, kLmax);
  return t;
}

namespace {

Eigen::Vector3d rotate_towards(const Eigen::Vector3d& d, const Eigen::Vector3d& axis, double rad)
{
  return (std::cos(rad) * d + std::sin(rad) * axis).normalized();
}

// Coordinate hill-climb on the sphere from a detected vertex maximum.
std::pair<Eigen::Vector3d, double> refine_peak(const Eigen::VectorXd& coeffs, Eigen::Vector3d dir,
                                               double step_deg)
{
  auto amp = [&](const Eigen::Vector3d& d) { return basis_at(d).dot(coeffs); };
  double best = amp(dir);
  double step = step_deg * std::numbers::pi / 180.0;
  const double min_step = 1e-4 * std::numbers::pi / 180.0;
  for (int iter = 0; iter < 200 && step > min_step; ++iter) {
    Eigen::Vector3d e1 = dir.unitOrthogonal();
    Eigen::Vector3d e2 = dir.cross(e1).normalized();
    bool moved = false;
    for (const Eigen::Vector3d& axis : {e1, Eigen::Vector3d(-e1), e2, Eigen::Vector3d(-e2)}) {
      const Eigen::Vector3d cand = rotate_towards(dir, axis, step);
      const double a = amp(cand);
      if (a > best) {
        best = a;
        dir = cand;
        moved = true;
        break;
      }
    }
    if (!moved)
      step *= 0.5;
  }
  return {dir, best};
}

} // namespace

PeakSet extract_peaks(const Eigen::Ref<const Eigen::VectorXd>& coeffs, const Tessellation& tess,
                      const PeakOptions& options)
{
  if (tess.size() == 0)
    throw InvalidArgument("extract_peaks: empty tessellation");
  if (coeffs.size() != kNumCoeffs)
    throw InvalidArgument("extract_peaks: expected 45 coefficients");

  const Eigen::VectorXd amp = tess.basis() * coeffs;
  std::vector<int> candidates;
  for (Eigen::Index v = 0; v < tess.size(); ++v) {
    if (!(amp[v] > options.amp_threshold))
      continue;
    bool is_max = true;
    for (int nb : tess.neighbours()[v])
      if (!(amp[v] > amp[nb])) {
        is_max = false;
        break;
      }
    if (is_max)
      candidates.push_back(static_cast<int>(v));
  }
  std::sort(candidates.begin(), candidates.end(),
            [&](int a, int b) { return amp[a] > amp[b]; });

  std::vector<std::pair<Eigen::Vector3d, double>> refined;
  for (int v : candidates) {
    Eigen::Vector3d d = tess.vertices().row(v).transpose();
    double a = amp[v];
    if (options.refine)
      std::tie(d, a) = refine_peak(coeffs, d, 0.5 * tess.resolution_deg());
    refined.emplace_back(d, a);
  }
  std::stable_sort(refined.begin(), refined.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  PeakSet peaks;
  for (const auto& [d, a] : refined) {
    if (static_cast<int>(peaks.size()) >= options.max_peaks)
      break;
    bool suppressed = false;
    for (const auto& kept : peaks.directions)
      if (axis_angle_deg(kept, d) < options.exclusion_deg) {
        suppressed = true;
        break;
      }
    if (suppressed)
      continue;
    peaks.directions.push_back(d);
    peaks.amplitudes.push_back(a);
  }
  return peaks;
}

AngularDifference angular_difference(const PeakSet& reference, const PeakSet& result)
{
  AngularDifference out;
  if (result.empty())
    return out;
  auto closest = [&](const Eigen::Vector3d& ref) {
    double best = 90.0;
    for (const auto& d : result.directions)
      best = std::min(best, axis_angle_deg(ref, d));
    return best;
  };
  if (reference.size() >= 1)
    out.first = closest(reference.directions[0]);
  if (reference.size() >= 2)
    out.second = closest(reference.directions[1]);
  return out;
}

} // namespace fodiff::sh
