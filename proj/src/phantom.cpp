// SPDX-License-Identifier: Apache-2.0
#include "fodiff/phantom.hpp"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fodiff/data_store.hpp"

namespace fodiff::phantom {

namespace {

constexpr double kPi = std::numbers::pi;

// 2 pi * Int_{-1}^{1} g(t) P_l(t) dt for the unit-mass Watson density, per even l.
std::array<double, sh::kNumOrders> watson_zonal(double kappa)
{
  constexpr int n = 4000; // Simpson intervals on [0, 1]
  const double h = 1.0 / n;
  std::array<double, sh::kNumOrders + 1> acc{};
  acc.fill(0.0);
  for (int i = 0; i <= n; ++i) {
    const double t = i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double g = std::exp(kappa * (t * t - 1.0));
    acc[0] += w * g; // normaliser
    for (int o = 0; o < sh::kNumOrders; ++o)
      acc[o + 1] += w * g * std::legendre(2 * o, t);
  }
  // Even integrands: Int_{-1}^{1} = 2 Int_0^1; the density integrates to 2 pi * that.
  const double mass = 2.0 * kPi * 2.0 * acc[0];
  std::array<double, sh::kNumOrders> out{};
  for (int o = 0; o < sh::kNumOrders; ++o)
    out[o] = 2.0 * kPi * 2.0 * acc[o + 1] / mass;
  return out;
}

Eigen::Vector3d random_unit(Rng& rng)
{
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

double line_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& axis)
{
  return (p - p.dot(axis) * axis).norm();
}

} // namespace

Eigen::Matrix<double, sh::kNumCoeffs, 1> fiber_to_coeffs(const FiberSpec& spec)
{
  if (!(spec.concentration >= 5.0 && spec.concentration <= 200.0))
    throw InvalidArgument("fiber_to_coeffs: concentration must lie in [5, 200], got " +
                          std::to_string(spec.concentration));
  if (!(spec.weight > 0.0 && spec.weight <= 1.0))
    throw InvalidArgument("fiber_to_coeffs: weight must lie in (0, 1]");
  const auto zonal = watson_zonal(spec.concentration);
  const auto y = sh::basis_at(spec.direction.normalized());
  Eigen::Matrix<double, sh::kNumCoeffs, 1> c;
  for (int f = 0; f < sh::kNumCoeffs; ++f)
    c[f] = spec.weight * zonal[sh::order_of(f) / 2] * y[f];
  return c;
}

Eigen::Matrix<double, sh::kNumCoeffs, 1> isotropic_coeffs(double weight)
{
  Eigen::Matrix<double, sh::kNumCoeffs, 1> c = Eigen::Matrix<double, sh::kNumCoeffs, 1>::Zero();
  c[0] = weight / (2.0 * std::sqrt(kPi));
  return c;
}

void PhantomConfig::validate() const
{
  if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8)
    throw InvalidArgument("PhantomConfig: dims must be at least 8 per axis");
  if (!(noise_sigma >= 0.0 && noise_sigma < 0.1))
    throw InvalidArgument("PhantomConfig: noise sigma must lie in [0, 0.1)");
  if (!(crossing_min_deg > 0.0 && crossing_min_deg <= crossing_max_deg && crossing_max_deg <= 90.0))
    throw InvalidArgument("PhantomConfig: invalid crossing angle range");
  if (!(kappa_min >= 5.0 && kappa_min <= kappa_max && kappa_max <= 200.0))
    throw InvalidArgument("PhantomConfig: kappa range must lie within [5, 200]");
}

Phantom make_phantom(const PhantomConfig& config)
{
  config.validate();
  Rng rng = split_rng(config.seed, 0);
  const Grid3 g = config.dims;

  Phantom ph;
  ph.centre = Eigen::Vector3d((g.nx - 1) / 2.0, (g.ny - 1) / 2.0, (g.nz - 1) / 2.0);
  const Eigen::Vector3d u1 = random_unit(rng);
  Eigen::Vector3d perp = u1.cross(random_unit(rng));
  if (perp.norm() < 1e-6)
    perp = u1.unitOrthogonal();
  perp.normalize();
  ph.crossing_deg = uniform(rng, config.crossing_min_deg, config.crossing_max_deg);
  const double theta = ph.crossing_deg * kPi / 180.0;
  const Eigen::Vector3d u2 = (std::cos(theta) * u1 + std::sin(theta) * perp).normalized();
  ph.fiber_a = {u1, 1.0, uniform(rng, config.kappa_min, config.kappa_max)};
  ph.fiber_b = {u2, 1.0, uniform(rng, config.kappa_min, config.kappa_max)};

  const auto ca = fiber_to_coeffs(ph.fiber_a);
  const auto cb = fiber_to_coeffs(ph.fiber_b);
  const auto iso = isotropic_coeffs(1.0);

  FodImage& img = ph.image;
  img = FodImage(g);
  ph.regions.assign(static_cast<std::size_t>(g.size()), Region::outside);
  const Eigen::Vector3d semi(config.brain_radius_fraction * g.nx,
                             config.brain_radius_fraction * g.ny,
                             config.brain_radius_fraction * g.nz);
  Eigen::MatrixXd clean = Eigen::MatrixXd::Zero(sh::kNumCoeffs, g.size());
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j)
      for (int k = 0; k < g.nz; ++k) {
        const Eigen::Vector3d p = Eigen::Vector3d(i, j, k) - ph.centre;
        if (p.cwiseQuotient(semi).squaredNorm() > 1.0)
          continue;
        const auto v = g.index(i, j, k);
        img.brain[v] = 1;
        const bool in_a = line_distance(p, u1) < config.bundle_radius;
        const bool in_b = line_distance(p, u2) < config.bundle_radius;
        Region r = Region::isotropic;
        if (in_a && in_b) {
          r = Region::crossing;
          clean.col(v) = 0.5 * ca + 0.5 * cb;
        } else if (in_a) {
          r = Region::bundle_a;
          clean.col(v) = ca;
        } else if (in_b) {
          r = Region::bundle_b;
          clean.col(v) = cb;
        } else {
          clean.col(v) = iso;
        }
        ph.regions[static_cast<std::size_t>(v)] = r;
      }

  std::array<double, sh::kNumOrders> order_mag{};
  order_mag.fill(0.0);
  for (int f = 0; f < sh::kNumCoeffs; ++f)
    order_mag[sh::order_of(f) / 2] =
        std::max(order_mag[sh::order_of(f) / 2], clean.row(f).cwiseAbs().maxCoeff());

  for (Eigen::Index v = 0; v < g.size(); ++v) {
    if (!img.brain[v])
      continue;
    for (int f = 0; f < sh::kNumCoeffs; ++f) {
      double c = clean(f, v);
      if (config.noise_sigma > 0.0)
        c += config.noise_sigma * order_mag[sh::order_of(f) / 2] * gaussian(rng);
      img.coeffs(f, v) = static_cast<float>(c);
    }
    // A brain voxel must stay distinguishable from background.
    if ((img.coeffs.col(v).array() == 0.0f).all())
      img.coeffs(0, v) = std::numeric_limits<float>::min();
  }
  return ph;
}

DistortionMask ball_mask(const FodImage& image, const Eigen::Vector3d& centre, double radius,
                         double severity)
{
  if (!(severity >= 0.0 && severity <= 1.0))
    throw InvalidArgument("ball_mask: severity must lie in [0, 1]");
  DistortionMask m{image.grid, VoxelMask::Zero(image.grid.size()), severity};
  const Grid3& g = image.grid;
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j)
      for (int k = 0; k < g.nz; ++k) {
        const auto v = g.index(i, j, k);
        if (image.brain[v] && (Eigen::Vector3d(i, j, k) - centre).norm() <= radius)
          m.mask[v] = 1;
      }
  return m;
}

FodImage apply_signal_loss(const FodImage& image, const DistortionMask& mask, Rng& rng,
                           double noise_level)
{
  if (!(mask.grid == image.grid) || mask.mask.size() != image.grid.size())
    throw InvalidArgument("apply_signal_loss: mask grid does not match image");
  if (!(mask.severity >= 0.0 && mask.severity <= 1.0))
    throw InvalidArgument("apply_signal_loss: severity must lie in [0, 1]");
  for (Eigen::Index v = 0; v < mask.mask.size(); ++v)
    if (mask.mask[v] && !image.brain[v])
      throw InvalidArgument("apply_signal_loss: mask exceeds the brain mask at voxel " +
                            std::to_string(v));

  FodImage out = image;
  const double s = mask.severity;
  if (s == 0.0)
    return out;

  std::array<double, sh::kNumOrders> mag{};
  mag.fill(0.0);
  for (Eigen::Index v = 0; v < mask.mask.size(); ++v)
    if (mask.mask[v])
      for (int f = 1; f < sh::kNumCoeffs; ++f)
        mag[sh::order_of(f) / 2] =
            std::max(mag[sh::order_of(f) / 2], static_cast<double>(std::abs(image.coeffs(f, v))));

  for (Eigen::Index v = 0; v < mask.mask.size(); ++v) {
    if (!mask.mask[v])
      continue;
    out.coeffs(0, v) = static_cast<float>(image.coeffs(0, v) * (1.0 - 0.9 * s));
    for (int f = 1; f < sh::kNumCoeffs; ++f) {
      const double sd = noise_level * s * mag[sh::order_of(f) / 2];
      out.coeffs(f, v) = static_cast<float>(image.coeffs(f, v) * (1.0 - 0.95 * s) + sd * gaussian(rng));
    }
  }
  return out;
}

Sample make_sample(const DatasetSpec& spec, std::uint64_t item_seed, double severity)
{
  PhantomConfig pc = spec.phantom;
  pc.seed = item_seed;
  Sample s{make_phantom(pc), {}, {}};
  Rng rng = split_rng(item_seed, 1);
  // Mask centre on bundle A's axis, somewhere between its single-fibre part and the crossing.
  const double along = uniform(rng, -4.0, 4.0);
  const Eigen::Vector3d centre = s.truth.centre + along * s.truth.fiber_a.direction;
  s.mask = ball_mask(s.truth.image, centre, spec.mask_radius, severity);
  s.corrupted = apply_signal_loss(s.truth.image, s.mask, rng);
  return s;
}

std::filesystem::path make_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir)
{
  if (spec.n_train < 1 || spec.n_val < 1 || spec.n_test < 1)
    throw InvalidArgument("make_dataset: every split needs at least one item");
  spec.phantom.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create dataset directory (" + ec.message() + ")", out_dir.string());

  nlohmann::json manifest;
  manifest["format"] = "fodiff-manifest";
  manifest["version"] = io::kFormatVersion;
  manifest["seed"] = spec.seed;
  manifest["phantom"] = {{"dims", {spec.phantom.dims.nx, spec.phantom.dims.ny, spec.phantom.dims.nz}},
                         {"brain_radius_fraction", spec.phantom.brain_radius_fraction},
                         {"bundle_radius", spec.phantom.bundle_radius},
                         {"crossing_deg", {spec.phantom.crossing_min_deg, spec.phantom.crossing_max_deg}},
                         {"kappa", {spec.phantom.kappa_min, spec.phantom.kappa_max}},
                         {"noise_sigma", spec.phantom.noise_sigma},
                         {"mask_radius", spec.mask_radius},
                         {"severity", {spec.severity_min, spec.severity_max}}};
  manifest["splits"] = nlohmann::json::object();

  const std::uint64_t base = splitmix64(spec.seed);
  std::uint64_t counter = 0;
  Rng severity_rng = split_rng(spec.seed, 0x5e7e);
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", spec.n_train},
                                     {"val", spec.n_val},
                                     {"test", spec.n_test}}) {
    auto& entries = manifest["splits"][split] = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
      const std::uint64_t item_seed = base + counter++;
      const double severity = uniform(severity_rng, spec.severity_min, spec.severity_max);
      const Sample s = make_sample(spec, item_seed, severity);
      char id[32];
      std::snprintf(id, sizeof id, "%s_%03d", split.c_str(), i);
      const std::string gt = std::string(id) + "_gt.fodc";
      const std::string cor = std::string(id) + "_corrupted.fodc";
      const std::string msk = std::string(id) + "_mask.fodm";
      io::write_fod(out_dir / gt, s.truth.image);
      io::write_fod(out_dir / cor, s.corrupted);
      io::write_mask(out_dir / msk, s.mask.mask, s.mask.grid);
      entries.push_back({{"id", id},
                         {"seed", item_seed},
                         {"severity", severity},
                         {"gt", gt},
                         {"corrupted", cor},
                         {"mask", msk},
                         {"digest",
                          io::file_digest(out_dir / gt) + io::file_digest(out_dir / cor) +
                              io::file_digest(out_dir / msk)}});
    }
  }
  std::string all;
  for (const auto& split : {"train", "val", "test"})
    for (const auto& e : manifest["splits"][split])
      all += e["digest"].get<std::string>();
  manifest["digest"] = io::fnv1a_hex(all);
  const auto path = out_dir / "manifest.json";
  io::write_manifest(path, manifest);
  return path;
}

} // namespace fodiff::phantom
