// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fodiff/ablation.hpp"
#include "fodiff/data_store.hpp"
#include "fodiff/evaluation.hpp"
#include "fodiff/phantom.hpp"
#include "fodiff/restorer.hpp"
#include "fodiff/trainer.hpp"

namespace fs = std::filesystem;
using namespace fodiff;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kFormat = 4,
  kIo = 5,
  kNumeric = 6,
  kInvalid = 7,
  kInternal = 8,
};

void log_line(const std::string& msg)
{
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::cerr << std::put_time(&tm, "%H:%M:%S") << " fodiff: " << msg << std::endl;
}

int exit_code_for(ErrorCategory c)
{
  switch (c) {
  case ErrorCategory::config:
    return kConfig;
  case ErrorCategory::format:
    return kFormat;
  case ErrorCategory::io:
    return kIo;
  case ErrorCategory::numeric:
    return kNumeric;
  case ErrorCategory::invalid_argument:
    return kInvalid;
  case ErrorCategory::internal:
    return kInternal;
  }
  return kInternal;
}

const char* category_name(ErrorCategory c)
{
  switch (c) {
  case ErrorCategory::config:
    return "config error";
  case ErrorCategory::format:
    return "format error";
  case ErrorCategory::io:
    return "io error";
  case ErrorCategory::numeric:
    return "numeric error";
  case ErrorCategory::invalid_argument:
    return "invalid argument";
  case ErrorCategory::internal:
    return "internal error";
  }
  return "error";
}

const char* remedy(ErrorCategory c)
{
  switch (c) {
  case ErrorCategory::config:
    return "check the --config file and flags (see --help)";
  case ErrorCategory::format:
    return "the file is not a valid fodiff container; regenerate it with gen-data, train or restore";
  case ErrorCategory::io:
    return "check that the path exists and is readable/writable";
  case ErrorCategory::numeric:
    return "lower the learning rate or resume from the last checkpoint";
  case ErrorCategory::invalid_argument:
    return "check image dimensions and option values";
  case ErrorCategory::internal:
    return "please report this as a bug";
  }
  return "";
}

/// Network and training settings shared by train and ablate.
struct ModelOptions {
  net::NetConfig net;
  train::TrainConfig train;
  std::string loss_space = "v";

  void attach(CLI::App* app)
  {
    app->add_option("--iterations", train.iterations, "Optimizer updates")->capture_default_str();
    app->add_option("--batch-size", train.batch_size, "Draws per update")->capture_default_str();
    app->add_option("--lr", train.lr_initial, "Initial learning rate")->capture_default_str();
    app->add_option("--lr-late", train.lr_late, "Learning rate after the switch")->capture_default_str();
    app->add_option("--lr-switch", train.lr_switch_fraction, "Fraction of iterations before the switch")
        ->capture_default_str();
    app->add_option("--weight-decay", train.weight_decay, "AdamW weight decay")->capture_default_str();
    app->add_option("--draws-per-image", train.draws_per_image, "Volume draws per image per epoch")
        ->capture_default_str();
    app->add_option("--val-draws", train.val_draws_per_image, "Fixed validation draws per image")
        ->capture_default_str();
    app->add_option("--timesteps", train.timesteps, "Diffusion steps T")->capture_default_str();
    app->add_option("--loss-space", loss_space, "Loss space: v or x0")
        ->check(CLI::IsMember({"v", "x0"}))
        ->capture_default_str();
    app->add_option("--base-channels", net.base_channels, "Channels at the finest level")->capture_default_str();
    app->add_option("--channel-mult", net.channel_mult, "Channel multiplier per level")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--attention-levels", net.attention_levels, "Levels with attention (0 = finest)")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--embed-dim", net.embed_dim, "Embedding width")->capture_default_str();
    app->add_option("--patch", net.patch_size, "Training crop edge")->capture_default_str();
    app->add_option("--tile", net.inference_patch, "Inference tile edge")->capture_default_str();
    app->add_option("--tile-overlap", net.tile_overlap, "Inference tile overlap")->capture_default_str();
    app->add_option("--norm-groups", net.norm_groups, "Group-norm groups")->capture_default_str();
    app->add_flag("--per-channel-order-weight", net.per_channel_order_weight,
                  "Per-channel order weights in the order balance");
  }

  void finish(std::uint64_t seed)
  {
    train.loss_space = train::parse_loss_space(loss_space);
    train.seed = seed;
    train.validate();
    net.validate();
  }
};

std::string rmse_line(const eval::OrderRmse& r)
{
  std::ostringstream os;
  os << std::setprecision(6);
  for (int o = 0; o < sh::kNumOrders; ++o)
    os << "L=" << 2 * o << " " << r.per_order[o] << "  ";
  os << "FODs " << r.overall;
  return os.str();
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Order-aware diffusion restoration of spherical-harmonic FOD images"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI configuration file; [section] names match subcommands");

  std::uint64_t seed = 0;
  std::string out_dir = "fodiff_out";
  int workers = 1;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--out", out_dir, "Output directory")->envname("FODIFF_OUT")->capture_default_str();
  app.add_option("--workers", workers, "Worker threads for restoration")
      ->envname("FODIFF_WORKERS")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset with a manifest");
  phantom::DatasetSpec spec;
  int grid = spec.phantom.dims.nx;
  gen->add_option("--n-train", spec.n_train, "Training phantoms")->capture_default_str();
  gen->add_option("--n-val", spec.n_val, "Validation phantoms")->capture_default_str();
  gen->add_option("--n-test", spec.n_test, "Test phantoms")->capture_default_str();
  gen->add_option("--grid", grid, "Grid edge length")->check(CLI::Range(8, 256))->capture_default_str();
  gen->add_option("--mask-radius", spec.mask_radius, "Distortion ball radius (voxels)")->capture_default_str();
  gen->add_option("--severity-min", spec.severity_min, "Smallest severity")->capture_default_str();
  gen->add_option("--severity-max", spec.severity_max, "Largest severity")->capture_default_str();
  gen->add_option("--noise", spec.phantom.noise_sigma, "Coefficient noise level")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train one model variant");
  ModelOptions train_opts;
  std::string manifest, variant = "full";
  bool resume = false;
  trn->add_option("--manifest", manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  trn->add_option("--variant", variant, "uncond, vol, vol_enc or full")
      ->check(CLI::IsMember({"uncond", "vol", "vol_enc", "full"}))
      ->capture_default_str();
  trn->add_flag("--resume", resume, "Continue from latest.ckpt in the output directory");
  train_opts.attach(trn);

  // restore
  auto* rst = app.add_subcommand("restore", "Restore the masked region of an FOD image");
  std::string checkpoint, input, mask_path, output;
  int steps = 250;
  int timesteps = 1000;
  rst->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  rst->add_option("--input", input, "Corrupted FOD container")->required()->check(CLI::ExistingFile);
  rst->add_option("--mask", mask_path, "Distortion mask container")->required()->check(CLI::ExistingFile);
  rst->add_option("--output", output, "Restored FOD container (default <out>/restored.fodc)");
  rst->add_option("--steps", steps, "Sampling steps (1000 = full schedule)")
      ->check(CLI::Range(1, 100000))
      ->capture_default_str();
  rst->add_option("--timesteps", timesteps, "Training schedule length")->capture_default_str();

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Score a restored image against ground truth inside a mask");
  std::string gt_path, restored_path, corrupted_path;
  double threshold = 0.5;
  evl->add_option("--gt", gt_path, "Ground-truth FOD container")->required()->check(CLI::ExistingFile);
  evl->add_option("--restored", restored_path, "Restored FOD container")->required()->check(CLI::ExistingFile);
  evl->add_option("--mask", mask_path, "Distortion mask container")->required()->check(CLI::ExistingFile);
  evl->add_option("--corrupted", corrupted_path, "Corrupted FOD container, for integrity before restoration")
      ->check(CLI::ExistingFile);
  evl->add_option("--threshold", threshold, "Peak amplitude threshold")->capture_default_str();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train all four variants and compare them on the test split");
  ModelOptions ablate_opts;
  std::string ablate_manifest;
  std::vector<std::string> variants{"uncond", "vol", "vol_enc", "full"};
  int ablate_steps = 250;
  int groups = 5;
  bool retrain = false;
  abl->add_option("--manifest", ablate_manifest, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  abl->add_option("--variant", variants, "Variants to include")
      ->delimiter(',')
      ->check(CLI::IsMember({"uncond", "vol", "vol_enc", "full"}))
      ->capture_default_str();
  abl->add_option("--steps", ablate_steps, "Sampling steps")->check(CLI::Range(1, 100000))->capture_default_str();
  abl->add_option("--groups", groups, "Severity groups")->check(CLI::Range(1, 1000))->capture_default_str();
  abl->add_flag("--retrain", retrain, "Train again even when a finished run exists");
  ablate_opts.attach(abl);

  // report
  auto* rep = app.add_subcommand("report", "Render the tables of an ablation report.json");
  std::string report_path;
  rep->add_option("--report", report_path, "report.json (default <out>/report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      spec.seed = seed;
      spec.phantom.dims = {grid, grid, grid};
      log_line("generating " + std::to_string(spec.n_train + spec.n_val + spec.n_test) + " phantoms into " + out_dir);
      const fs::path m = phantom::make_dataset(spec, out_dir);
      const io::Manifest man = io::read_manifest(m);
      std::cout << m.string() << "\n" << "digest " << man.raw.value("digest", "") << "\n";
    } else if (*trn) {
      train_opts.finish(seed);
      const net::Variant v = net::parse_variant(variant);
      train::FitOptions fo;
      fo.resume = resume;
      const int every = std::max(1, train_opts.train.iterations / 50);
      fo.on_iteration = [&](int it, double loss, double lr) {
        if (it % every == 0)
          log_line("iteration " + std::to_string(it) + " loss " + std::to_string(loss) + " lr " + std::to_string(lr));
      };
      log_line("training variant " + variant + " into " + out_dir);
      const auto res = train::fit(train_opts.train, train_opts.net, v, manifest, out_dir, fo);
      std::cout << "best " << res.best_path.string() << "\n"
                << "initial_val " << res.initial_val << "\n"
                << "best_val " << res.best_val << "\n";
    } else if (*rst) {
      const train::Model model = train::load_model(checkpoint);
      const FodImage corrupted = io::read_fod(input);
      Grid3 mg;
      const VoxelMask mask = io::read_mask(mask_path, mg);
      if (!(mg == corrupted.grid))
        throw InvalidArgument("restore: mask grid differs from the image grid");
      restore::RestoreOptions ro;
      ro.steps = steps;
      ro.timesteps = timesteps;
      ro.seed = seed;
      ro.workers = workers;
      const fs::path dst = output.empty() ? fs::path(out_dir) / "restored.fodc" : fs::path(output);
      if (dst.has_parent_path())
        fs::create_directories(dst.parent_path());
      log_line("restoring " + input + " with " + std::to_string(steps) + " steps");
      io::write_fod(dst, restore::restore_image(corrupted, mask, model, ro));
      std::cout << dst.string() << "\n";
    } else if (*evl) {
      const FodImage gt = io::read_fod(gt_path);
      const FodImage restored = io::read_fod(restored_path);
      Grid3 mg;
      const VoxelMask mask = io::read_mask(mask_path, mg);
      const sh::Tessellation tess = sh::Tessellation::icosphere(4);
      const auto r = eval::rmse_per_order(gt, restored, mask);
      const auto a = eval::angular_report(gt, restored, mask, tess, threshold);
      std::cout << "rmse\t" << rmse_line(r) << "\n";
      const auto ms = [](const std::optional<eval::MeanStd>& m) {
        std::ostringstream os;
        if (m)
          os << std::fixed << std::setprecision(3) << m->mean << " +- " << m->std << " deg (n=" << m->count << ")";
        else
          os << "absent";
        return os.str();
      };
      std::cout << "peak1\t" << ms(a.first) << "\texcluded " << a.first_excluded << "\n";
      std::cout << "peak2\t" << ms(a.second) << "\texcluded " << a.second_excluded << "\n";
      std::cout << "integrity_gt\t" << eval::integrity(gt, mask) << "\n";
      std::cout << "integrity_restored\t" << eval::integrity(restored, mask) << "\n";
      if (!corrupted_path.empty())
        std::cout << "integrity_corrupted\t" << eval::integrity(io::read_fod(corrupted_path), mask) << "\n";
    } else if (*abl) {
      ablate_opts.finish(seed);
      eval::AblationConfig ac;
      ac.manifest = ablate_manifest;
      ac.out_dir = out_dir;
      ac.train = ablate_opts.train;
      ac.net = ablate_opts.net;
      ac.restore.steps = ablate_steps;
      ac.restore.timesteps = ablate_opts.train.timesteps;
      ac.restore.seed = seed;
      ac.restore.workers = workers;
      ac.variants.clear();
      for (const auto& v : variants)
        ac.variants.push_back(net::parse_variant(v));
      ac.severity_groups = groups;
      ac.reuse_trained = !retrain;
      ac.log = log_line;
      const auto res = eval::run_ablation(ac);
      std::ifstream in(res.report_path);
      std::cout << eval::render_report(nlohmann::json::parse(in));
    } else if (*rep) {
      const fs::path p = report_path.empty() ? fs::path(out_dir) / "report.json" : fs::path(report_path);
      std::ifstream in(p);
      if (!in)
        throw IoError("cannot open report", p.string());
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("report is not valid JSON: ") + e.what(), 0);
      }
      std::cout << eval::render_report(j);
    }
  } catch (const Error& e) {
    std::cerr << "fodiff: " << category_name(e.category()) << ": " << e.what() << "\n  hint: " << remedy(e.category())
              << "\n";
    return exit_code_for(e.category());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "fodiff: format error: " << e.what() << "\n  hint: " << remedy(ErrorCategory::format) << "\n";
    return kFormat;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "fodiff: io error: " << e.what() << "\n  hint: " << remedy(ErrorCategory::io) << "\n";
    return kIo;
  }
  return kOk;
}
