// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fodiff/data_store.hpp"
#include "fodiff/denoiser.hpp"
#include "fodiff/diffusion.hpp"
#include "fodiff/prepared.hpp"

/// Training loop: uniform (image, volume, t) sampling, masked L1 loss, AdamW
/// with a one-step learning-rate decay, per-epoch validation on fixed draws,
/// best/latest checkpoints and resumable state.
namespace fodiff::train {

enum class LossSpace { v, x0 };

LossSpace parse_loss_space(const std::string& name);
std::string loss_space_name(LossSpace s);

struct TrainConfig {
  int iterations = 8000;
  int batch_size = 8;
  double lr_initial = 1e-5;
  double lr_late = 1e-6;
  double lr_switch_fraction = 0.7;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  int draws_per_image = 45;     ///< volume draws per training image in one epoch
  int val_draws_per_image = 8;  ///< fixed (volume, t, noise, crop) draws per validation image
  int timesteps = 1000;
  LossSpace loss_space = LossSpace::v;
  std::uint64_t seed = 0;

  void validate() const;
  /// Iteration index at which the rate drops: floor(fraction * iterations).
  int lr_switch_iteration() const;
  double lr_at(int iteration) const;
  /// Iterations per epoch, at least one.
  int epoch_length(int n_train_images) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Trained weights with everything needed to run them.
struct Model {
  net::NetConfig config;
  net::Variant variant = net::Variant::full;
  ScaleTable scale;
  std::shared_ptr<net::Denoiser<float>> net;
  /// Synchronised frozen copy; present when cross-attention is enabled.
  std::shared_ptr<net::FrozenCopy<float>> copy;
};

/// Writes the network parameters, its configuration and the scale table.
io::Checkpoint model_checkpoint(const Model& model, nlohmann::json extra = {});
/// Restores a model from a checkpoint written by `model_checkpoint` or by fit.
Model load_model(const std::filesystem::path& path);
/// Fresh model built from a configuration, its frozen copy synced.
Model make_model(const net::NetConfig& config, net::Variant variant, const ScaleTable& scale,
                 std::uint64_t seed);

/// One fixed draw: image, volume, diffusion step, noise and crop.
struct Draw {
  std::size_t image = 0;
  int flat = 0;
  int t = 1;
  Box3 crop;
  Eigen::MatrixXf eps; ///< 1 x crop voxels
};

/// Loss of one draw as a differentiable scalar. Requires the frozen copy to be
/// in sync when cross-attention is enabled.
nn::Var<float> draw_loss(const Model& model, const PreparedImage& image, const Draw& draw,
                         const diffusion::NoiseSchedule& sched, LossSpace space);

struct TrainState {
  int iteration = 0;
  int epoch = 0;
  double best_val = 0.0;
  bool has_best = false;
  std::string rng_state;
};

class Trainer {
public:
  Trainer(Model model, TrainConfig config, std::vector<PreparedImage> train_set,
          std::vector<PreparedImage> val_set);

  /// One optimizer update over a batch of uniform draws. Returns the batch mean
  /// loss; throws NumericError on a non-finite loss.
  double train_step();
  /// Mean loss over the fixed validation draws, without gradients.
  double validate();

  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  /// Copy synchronisations that followed an optimizer update.
  std::uint64_t sync_count() const;
  double current_lr() const { return config_.lr_at(state_.iteration); }
  int epoch_length() const { return config_.epoch_length(static_cast<int>(train_.size())); }

  /// Full resumable state: parameters, optimizer moments, counters, rng.
  io::Checkpoint save_state() const;
  void load_state(const io::Checkpoint& ckpt);

private:
  Draw sample_draw(Rng& rng, const std::vector<PreparedImage>& set) const;
  void apply_update();

  Model model_;
  TrainConfig config_;
  std::vector<PreparedImage> train_, val_;
  std::vector<Draw> val_draws_;
  diffusion::NoiseSchedule sched_;
  Rng rng_;
  TrainState state_;
  std::vector<std::pair<std::string, nn::Var<float>>> params_;
  std::vector<Eigen::MatrixXf> m_, v_;
  std::uint64_t update_syncs_ = 0;
};

struct FitOptions {
  bool resume = false;
  /// Stop once this many iterations are done (for interruption tests).
  std::optional<int> stop_after;
  /// Called after every iteration with (iteration, loss, lr).
  std::function<void(int, double, double)> on_iteration;
};

struct FitResult {
  std::filesystem::path best_path, latest_path, log_path;
  double initial_val = 0.0;
  double best_val = 0.0;
  int iterations_done = 0;
  std::vector<double> losses; ///< loss of each iteration run in this call
};

/// Trains on the manifest's "train" split, validates on "val" every epoch and
/// writes latest.ckpt, best.ckpt, scale.json and train_log.tsv into out_dir.
FitResult fit(const TrainConfig& config, const net::NetConfig& net_config, net::Variant variant,
              const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
              const FitOptions& options = {});

} // namespace fodiff::train
