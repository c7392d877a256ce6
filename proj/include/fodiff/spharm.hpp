// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/errors.hpp"

/// Real, even-order spherical harmonics for fibre orientation distributions.
///
/// Coefficients are stored per order l = 0, 2, ..., lmax, and within each order
/// by m = -l..l. The basis is the symmetric real convention without the
/// Condon-Shortley phase (as used by common FOD software):
///
///   Y_l^0      = N_l^0 P_l^0(cos theta)
///   Y_l^m      = sqrt(2) N_l^m P_l^m(cos theta) cos(m phi)       for m > 0
///   Y_l^{-m}   = sqrt(2) N_l^m P_l^m(cos theta) sin(m phi)       for m > 0
///   N_l^m      = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)
///
/// which is orthonormal under the uniform measure on the unit sphere.
namespace fodiff::sh {

inline constexpr int kLmax = 8;
inline constexpr int kNumCoeffs = 45;
inline constexpr int kNumOrders = 5;

/// Number of coefficients of an even-order expansion up to `lmax`.
constexpr int n_coeffs(int lmax) { return (lmax + 1) * (lmax + 2) / 2; }
/// Flat index of the first coefficient of even order `l`.
constexpr int order_offset(int l) { return l * (l - 1) / 2; }

/// Addresses one coefficient volume of an FOD image.
struct VolumeIndex {
  int order = 0;   ///< even, 0..lmax
  int m_index = 0; ///< 0..2*order, i.e. m + order
  int flat = 0;    ///< order_offset(order) + m_index

  int m() const { return m_index - order; }
  friend bool operator==(const VolumeIndex&, const VolumeIndex&) = default;
};

/// All volumes up to `lmax`, ordered by order then m. Throws on odd/negative lmax.
std::vector<VolumeIndex> volume_index_table(int lmax);

/// Index of volume `flat` within the lmax = 8 table.
VolumeIndex volume_index(int flat);

/// Order of the volume with the given flat index.
int order_of(int flat);

namespace detail {
void basis_row(double x, double y, double z, int lmax, double* out);
void check_unit(double x, double y, double z);
} // namespace detail

/// Basis matrix: row d holds every basis function evaluated at direction d.
/// `directions` is n x 3 with unit-norm rows.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
spharm_basis(const Eigen::MatrixBase<Derived>& directions, int lmax = kLmax)
{
  using Scalar = typename Derived::Scalar;
  if (directions.cols() != 3)
    throw InvalidArgument("spharm_basis: directions must be an n x 3 matrix");
  if (lmax < 0 || lmax % 2)
    throw InvalidArgument("spharm_basis: lmax must be even and non-negative");
  const int nc = n_coeffs(lmax);
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> B(directions.rows(), nc);
  std::vector<double> row(nc);
  for (Eigen::Index d = 0; d < directions.rows(); ++d) {
    const double x = static_cast<double>(directions(d, 0));
    const double y = static_cast<double>(directions(d, 1));
    const double z = static_cast<double>(directions(d, 2));
    detail::check_unit(x, y, z);
    detail::basis_row(x, y, z, lmax, row.data());
    for (int j = 0; j < nc; ++j)
      B(d, j) = static_cast<Scalar>(row[j]);
  }
  return B;
}

/// Basis row for a single direction (lmax = 8).
Eigen::Matrix<double, 1, kNumCoeffs> basis_at(const Eigen::Vector3d& direction);

/// Amplitudes of the FOD with coefficients `coeffs` (45) at each direction row.
template <class DerivedC, class DerivedD>
Eigen::VectorXd evaluate_fod(const Eigen::MatrixBase<DerivedC>& coeffs,
                             const Eigen::MatrixBase<DerivedD>& directions)
{
  if (coeffs.size() != kNumCoeffs)
    throw InvalidArgument("evaluate_fod: expected 45 coefficients, got " +
                          std::to_string(coeffs.size()));
  const Eigen::VectorXd c = coeffs.reshaped().template cast<double>();
  return spharm_basis(directions.template cast<double>(), kLmax) * c;
}

/// Angle in degrees between two axes (antipodally identified), in [0, 90].
double axis_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Unit-sphere point set with a neighbour graph, built from a subdivided
/// icosahedron. With `antipodal` set, each antipodal pair is kept once and
/// neighbours of either member are merged.
class Tessellation {
public:
  static Tessellation icosphere(int level, bool antipodal = true);

  const Eigen::MatrixX3d& vertices() const { return vertices_; }
  const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }
  /// n x 45 basis matrix at the vertices.
  const Eigen::MatrixXd& basis() const { return basis_; }
  Eigen::Index size() const { return vertices_.rows(); }
  /// Quadrature weight of each vertex: a third of the spherical area of the
  /// incident triangles (both antipodal members summed). Sums to 4 pi.
  const Eigen::VectorXd& weights() const { return weights_; }
  /// Covering radius in degrees: no direction lies farther than this from its
  /// nearest vertex.
  double resolution_deg() const { return resolution_deg_; }

private:
  Eigen::MatrixX3d vertices_;
  std::vector<std::vector<int>> neighbours_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd weights_;
  double resolution_deg_ = 0.0;
};

struct PeakSet {
  std::vector<Eigen::Vector3d> directions;
  std::vector<double> amplitudes; ///< descending
  std::size_t size() const { return directions.size(); }
  bool empty() const { return directions.empty(); }
};

struct PeakOptions {
  double amp_threshold = 0.5;
  int max_peaks = 3;
  double exclusion_deg = 25.0;
  bool refine = true; ///< hill-climb off the vertex grid after detection
};

/// Local maxima of the FOD amplitude over the tessellation that exceed the
/// threshold; weaker maxima within `exclusion_deg` of a stronger one are dropped.
PeakSet extract_peaks(const Eigen::Ref<const Eigen::VectorXd>& coeffs, const Tessellation& tess,
                      const PeakOptions& options = {});

struct AngularDifference {
  std::optional<double> first;  ///< degrees, for the strongest reference peak
  std::optional<double> second; ///< degrees, for the second reference peak
};

/// Smallest axis angle from each of the two strongest reference peaks to any
/// result peak. Entries are absent when either side has nothing to compare.
AngularDifference angular_difference(const PeakSet& reference, const PeakSet& result);

} // namespace fodiff::sh
