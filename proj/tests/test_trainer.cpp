// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fodiff/trainer.hpp"
#include "temp_dir.hpp"
#include "toy_model.hpp"

using namespace fodiff;
using namespace fodiff::train;
namespace fs = std::filesystem;

namespace {

/// A 2/1/1 dataset of 12^3 phantoms, generated once per process.
const fs::path& toy_manifest()
{
  static test::TempDir dir;
  static const fs::path manifest = [] {
    phantom::DatasetSpec spec;
    spec.n_train = 2;
    spec.n_val = 1;
    spec.n_test = 1;
    spec.phantom.dims = Grid3{12, 12, 12};
    spec.phantom.bundle_radius = 3.0;
    spec.mask_radius = 2.0;
    spec.seed = 21;
    return phantom::make_dataset(spec, dir.path());
  }();
  return manifest;
}

TrainConfig toy_train()
{
  TrainConfig c;
  c.iterations = 12;
  c.batch_size = 2;
  c.draws_per_image = 4;
  c.val_draws_per_image = 2;
  c.lr_initial = 1e-3;
  c.lr_late = 1e-4;
  c.seed = 3;
  return c;
}

std::vector<PreparedImage> toy_split(const std::string& split, const ScaleTable& scale)
{
  const auto m = io::read_manifest(toy_manifest());
  return prepare_items(io::load_split(m, split), scale);
}

ScaleTable toy_scale()
{
  const auto m = io::read_manifest(toy_manifest());
  std::vector<FodImage> gts;
  for (const auto& it : io::load_split(m, "train"))
    gts.push_back(it.gt);
  return compute_scale_table(gts);
}

Trainer toy_trainer(net::Variant variant = net::Variant::full)
{
  const ScaleTable scale = toy_scale();
  return Trainer(make_model(test::toy_config(), variant, scale, 5), toy_train(), toy_split("train", scale),
                 toy_split("val", scale));
}

std::vector<double> logged_vals(const fs::path& log)
{
  std::ifstream in(log);
  std::string line;
  std::vector<double> vals;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("iteration", 0) == 0)
      continue;
    std::istringstream row(line);
    std::string it, loss, lr, val;
    std::getline(row, it, '\t');
    std::getline(row, loss, '\t');
    std::getline(row, lr, '\t');
    std::getline(row, val, '\t');
    if (val != "-")
      vals.push_back(std::stod(val));
  }
  return vals;
}

} // namespace

TEST_CASE("learning-rate schedule and epoch length")
{
  TrainConfig c;
  c.iterations = 8000;
  CHECK(c.lr_switch_iteration() == 5600);
  CHECK(c.lr_at(static_cast<int>(0.69 * 8000)) == 1e-5);
  CHECK(c.lr_at(static_cast<int>(0.71 * 8000)) == 1e-6);
  CHECK(c.lr_at(5599) == 1e-5);
  CHECK(c.lr_at(5600) == 1e-6);
  CHECK(c.epoch_length(32) == 180);
  CHECK(c.epoch_length(1) == 5);
  CHECK_NOTHROW(c.validate());
  c.lr_switch_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_late = 1e-4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_loss_space("x0") == LossSpace::x0);
  CHECK_THROWS_AS(parse_loss_space("eps"), ConfigError);

  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
}

TEST_CASE("copy synchronisations equal optimizer updates")
{
  Trainer t = toy_trainer();
  CHECK(t.sync_count() == 0);
  for (int i = 0; i < 3; ++i) {
    const double loss = t.train_step();
    CHECK(std::isfinite(loss));
  }
  CHECK(t.state().iteration == 3);
  CHECK(t.sync_count() == 3);
  CHECK(t.model().net->version() == 3);
  CHECK(t.model().copy->in_sync_with(*t.model().net));
}

TEST_CASE("validation is deterministic and side-effect free")
{
  Trainer a = toy_trainer();
  Trainer b = toy_trainer();
  const double v1 = a.validate();
  CHECK(a.validate() == v1);
  CHECK(a.train_step() == b.train_step());
}

TEST_CASE("an all-zero mask gives a finite loss")
{
  const ScaleTable scale = toy_scale();
  auto images = toy_split("train", scale);
  PreparedImage& img = images.front();
  img.mask.setZero();
  Model model = make_model(test::toy_config(), net::Variant::full, scale, 1);
  Draw d;
  d.image = 0;
  d.flat = 3;
  d.t = 10;
  d.crop = patch_around(Box3{{2, 2, 2}, {5, 5, 5}}, img.grid, 8, nullptr);
  d.eps = Eigen::MatrixXf::Ones(1, 512);
  const auto sched = diffusion::linear_schedule();
  const double loss = draw_loss(model, img, d, sched, LossSpace::v).value()(0, 0);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
}

TEST_CASE("a non-finite loss aborts with context")
{
  Trainer t = toy_trainer(net::Variant::vol);
  t.model().net->parameters().front().second.mutable_value()(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    t.train_step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
}

TEST_CASE("fit is deterministic, resumable and keeps the best validation")
{
  test::TempDir a, b;
  const auto cfg = toy_train();
  const auto net_cfg = test::toy_config();
  const auto full = fit(cfg, net_cfg, net::Variant::full, toy_manifest(), a.path());
  CHECK(full.iterations_done == 12);
  CHECK(full.losses.size() == 12);
  CHECK(full.best_val <= full.initial_val);
  CHECK(fs::exists(full.best_path));
  CHECK(fs::exists(a / "scale.json"));

  const auto vals = logged_vals(full.log_path);
  REQUIRE(vals.size() == 4); // iteration 0 plus three epochs of four iterations
  CHECK(*std::min_element(vals.begin(), vals.end()) == doctest::Approx(full.best_val).epsilon(1e-6));
  const auto best_meta = io::load_checkpoint(full.best_path).meta;
  CHECK(best_meta.at("state").at("best_val").get<double>() == full.best_val);

  const auto again = fit(cfg, net_cfg, net::Variant::full, toy_manifest(), b.path(), {false, 6, {}});
  CHECK(again.iterations_done == 6);
  for (int i = 0; i < 6; ++i)
    CHECK(again.losses[static_cast<std::size_t>(i)] == full.losses[static_cast<std::size_t>(i)]);

  // The latest checkpoint was written at iteration 4; resuming replays 5..12.
  const auto resumed = fit(cfg, net_cfg, net::Variant::full, toy_manifest(), b.path(), {true, {}, {}});
  REQUIRE(resumed.losses.size() == 8);
  for (int i = 0; i < 8; ++i)
    CHECK(resumed.losses[static_cast<std::size_t>(i)] == full.losses[static_cast<std::size_t>(i + 4)]);
  CHECK(resumed.best_val == full.best_val);
  CHECK(logged_vals(resumed.log_path) == vals);

  const Model m1 = load_model(full.latest_path);
  const Model m2 = load_model(resumed.latest_path);
  auto p1 = m1.net->parameters();
  auto p2 = m2.net->parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK((p1[i].second.value().array() == p2[i].second.value().array()).all());
  CHECK(m1.scale == toy_scale());
  CHECK(m1.copy->in_sync_with(*m1.net));

  TrainConfig other = cfg;
  other.lr_initial = 5e-4;
  CHECK_THROWS_AS(fit(other, net_cfg, net::Variant::full, toy_manifest(), b.path(), {true, {}, {}}), ConfigError);
}
