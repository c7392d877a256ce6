// SPDX-License-Identifier: Apache-2.0
#include "fodiff/trainer.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fodiff::train {

namespace fs = std::filesystem;
using nn::Var;

LossSpace parse_loss_space(const std::string& name)
{
  if (name == "v")
    return LossSpace::v;
  if (name == "x0")
    return LossSpace::x0;
  throw ConfigError("unknown loss space \"" + name + "\" (expected v or x0)");
}

std::string loss_space_name(LossSpace s) { return s == LossSpace::v ? "v" : "x0"; }

void TrainConfig::validate() const
{
  if (iterations < 1)
    throw ConfigError("train: iterations must be positive");
  if (batch_size < 1)
    throw ConfigError("train: batch size must be positive");
  if (!(lr_late > 0.0 && lr_late <= lr_initial))
    throw ConfigError("train: need 0 < lr_late <= lr_initial");
  if (!(lr_switch_fraction > 0.0 && lr_switch_fraction < 1.0))
    throw ConfigError("train: lr switch fraction must lie in (0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
    throw ConfigError("train: invalid AdamW moments");
  if (weight_decay < 0.0)
    throw ConfigError("train: weight decay must be non-negative");
  if (draws_per_image < 1 || val_draws_per_image < 1)
    throw ConfigError("train: draws per image must be positive");
  if (timesteps < 2)
    throw ConfigError("train: at least two diffusion steps are required");
}

int TrainConfig::lr_switch_iteration() const
{
  return static_cast<int>(std::floor(lr_switch_fraction * iterations));
}

double TrainConfig::lr_at(int iteration) const
{
  return iteration < lr_switch_iteration() ? lr_initial : lr_late;
}

int TrainConfig::epoch_length(int n_train_images) const
{
  return std::max(1, n_train_images * draws_per_image / batch_size);
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
  j = nlohmann::json{{"iterations", c.iterations},
                     {"batch_size", c.batch_size},
                     {"lr_initial", c.lr_initial},
                     {"lr_late", c.lr_late},
                     {"lr_switch_fraction", c.lr_switch_fraction},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"draws_per_image", c.draws_per_image},
                     {"val_draws_per_image", c.val_draws_per_image},
                     {"timesteps", c.timesteps},
                     {"loss_space", loss_space_name(c.loss_space)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
  j.at("iterations").get_to(c.iterations);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr_initial").get_to(c.lr_initial);
  j.at("lr_late").get_to(c.lr_late);
  j.at("lr_switch_fraction").get_to(c.lr_switch_fraction);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("draws_per_image").get_to(c.draws_per_image);
  j.at("val_draws_per_image").get_to(c.val_draws_per_image);
  j.at("timesteps").get_to(c.timesteps);
  c.loss_space = parse_loss_space(j.at("loss_space").get<std::string>());
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------- model

namespace {

constexpr const char* kParamPrefix = "param/";

nlohmann::json scale_json(const ScaleTable& t) { return nlohmann::json(t.scale); }

ScaleTable scale_from_json(const nlohmann::json& j)
{
  ScaleTable t;
  if (!j.is_array() || j.size() != t.scale.size())
    throw FormatError("checkpoint: scale table must hold 5 numbers", 0);
  for (std::size_t i = 0; i < t.scale.size(); ++i)
    t.scale[i] = j[i].get<double>();
  return t;
}

void load_parameters(net::Denoiser<float>& net, const io::Checkpoint& ckpt)
{
  net.visit([&](const std::string& name, Var<float>& v) {
    const Eigen::MatrixXf& src = ckpt.tensor(kParamPrefix + name);
    if (src.rows() != v.rows() || src.cols() != v.cols())
      throw FormatError("checkpoint: tensor " + name + " has the wrong shape", 0);
    v.mutable_value() = src;
  });
}

} // namespace

io::Checkpoint model_checkpoint(const Model& model, nlohmann::json extra)
{
  io::Checkpoint ck;
  ck.meta = std::move(extra);
  if (!ck.meta.is_object())
    ck.meta = nlohmann::json::object();
  ck.meta["format"] = "fodiff-model";
  ck.meta["net"] = model.config;
  ck.meta["variant"] = net::variant_name(model.variant);
  ck.meta["scale"] = scale_json(model.scale);
  ck.meta["version"] = model.net->version();
  model.net->visit([&](const std::string& name, Var<float>& v) {
    ck.tensors.push_back({kParamPrefix + name, v.value()});
  });
  return ck;
}

Model make_model(const net::NetConfig& config, net::Variant variant, const ScaleTable& scale, std::uint64_t seed)
{
  Model m;
  m.config = config;
  m.config.apply_variant(variant);
  m.variant = variant;
  m.scale = scale;
  m.net = std::make_shared<net::Denoiser<float>>(m.config, seed);
  if (m.config.use_cross_attention) {
    m.copy = std::make_shared<net::FrozenCopy<float>>(*m.net);
    m.copy->sync_from(*m.net);
  }
  return m;
}

Model load_model(const fs::path& path)
{
  const io::Checkpoint ck = io::load_checkpoint(path);
  if (ck.meta.value("format", "") != "fodiff-model")
    throw FormatError("checkpoint " + path.string() + " does not hold a model", 0);
  Model m;
  try {
    m.config = ck.meta.at("net").get<net::NetConfig>();
    m.variant = net::parse_variant(ck.meta.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what(), 0);
  }
  m.config.validate();
  m.scale = scale_from_json(ck.meta.at("scale"));
  m.net = std::make_shared<net::Denoiser<float>>(m.config, 0);
  load_parameters(*m.net, ck);
  m.net->set_version(ck.meta.value("version", std::uint64_t{0}));
  if (m.config.use_cross_attention) {
    m.copy = std::make_shared<net::FrozenCopy<float>>(*m.net);
    m.copy->sync_from(*m.net);
  }
  return m;
}

// ---------------------------------------------------------------- loss

Var<float> draw_loss(const Model& model, const PreparedImage& image, const Draw& draw,
                     const diffusion::NoiseSchedule& sched, LossSpace space)
{
  if (image.target.size() == 0)
    throw InvalidArgument("draw_loss: image " + image.id + " has no target");
  const Grid3 g = draw.crop.extent();
  const Eigen::MatrixXf x0 = crop(image.target.row(draw.flat), image.grid, draw.crop);
  const Eigen::MatrixXf cond = crop(image.condition.row(draw.flat), image.grid, draw.crop);
  const Eigen::MatrixXf mask = crop(image.mask, image.grid, draw.crop);
  const Eigen::MatrixXf x_t = diffusion::q_sample(x0, draw.t, draw.eps, sched);
  const auto pack = net::pack_condition<float>(cond, mask);
  const Eigen::MatrixXf input = model.net->assemble_input(x_t, pack);

  std::vector<Var<float>> kv;
  const std::vector<Var<float>>* kv_ptr = nullptr;
  if (model.config.use_cross_attention) {
    const Eigen::MatrixXf avg = crop(image.order_avg, image.grid, draw.crop);
    const auto bank = model.copy->extract(*model.net, avg, mask, g);
    kv = model.net->combine_bank(bank);
    kv_ptr = &kv;
  }
  const Var<float> v_pred =
      model.net->forward(input, g, sched.model_t[draw.t], sh::volume_index(draw.flat), kv_ptr);
  if (space == LossSpace::v)
    return nn::masked_weighted_l1(v_pred, diffusion::v_target(x0, draw.eps, draw.t, sched), mask);
  const float a = static_cast<float>(std::sqrt(sched.alpha_bar[draw.t]));
  const float s = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[draw.t]));
  const Var<float> x0_pred = nn::add(Var<float>(Eigen::MatrixXf(a * x_t)), nn::scale(v_pred, -s));
  return nn::masked_weighted_l1(x0_pred, x0, mask);
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(Model model, TrainConfig config, std::vector<PreparedImage> train_set,
                 std::vector<PreparedImage> val_set)
    : model_(std::move(model)), config_(config), train_(std::move(train_set)), val_(std::move(val_set)),
      sched_(diffusion::linear_schedule(config.timesteps)), rng_(split_rng(config.seed, 0x7472))
{
  config_.validate();
  if (train_.empty())
    throw ConfigError("train: the training split is empty");
  if (val_.empty())
    throw ConfigError("train: the validation split is empty");
  for (const auto* set : {&train_, &val_})
    for (const auto& im : *set)
      if (im.target.size() == 0)
        throw InvalidArgument("train: image " + im.id + " has no target");
  params_ = model_.net->parameters();
  for (const auto& [name, p] : params_) {
    m_.push_back(Eigen::MatrixXf::Zero(p.rows(), p.cols()));
    v_.push_back(Eigen::MatrixXf::Zero(p.rows(), p.cols()));
  }
  Rng vr = split_rng(config.seed, 0x76616c);
  for (std::size_t i = 0; i < val_.size(); ++i)
    for (int d = 0; d < config_.val_draws_per_image; ++d) {
      Draw dr = sample_draw(vr, val_);
      dr.image = i;
      val_draws_.push_back(std::move(dr));
    }
  state_.rng_state = rng_state(rng_);
}

Draw Trainer::sample_draw(Rng& rng, const std::vector<PreparedImage>& set) const
{
  Draw d;
  d.image = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(set.size()) - 1));
  d.flat = uniform_int(rng, 0, sh::kNumCoeffs - 1);
  d.t = uniform_int(rng, 1, sched_.T);
  const PreparedImage& im = set[d.image];
  d.crop = patch_around(im.mask_box, im.grid, model_.config.patch_size, &rng);
  d.eps.resize(1, d.crop.extent().size());
  fill_gaussian(d.eps, rng);
  return d;
}

std::uint64_t Trainer::sync_count() const { return update_syncs_; }

double Trainer::train_step()
{
  for (auto& [name, p] : params_)
    p.zero_grad();
  double total = 0.0;
  std::ostringstream ids;
  for (int b = 0; b < config_.batch_size; ++b) {
    const Draw d = sample_draw(rng_, train_);
    ids << (b ? "," : "") << train_[d.image].id << ":v" << d.flat << ":t" << d.t;
    const Var<float> loss = draw_loss(model_, train_[d.image], d, sched_, config_.loss_space);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << state_.iteration << " (lr " << current_lr() << ", batch "
          << ids.str() << ")";
      throw NumericError(msg.str());
    }
    total += value;
    nn::backward(loss);
  }
  apply_update();
  ++state_.iteration;
  model_.net->mark_updated();
  if (model_.copy) {
    model_.copy->sync_from(*model_.net);
    ++update_syncs_;
  }
  state_.rng_state = rng_state(rng_);
  return total / config_.batch_size;
}

void Trainer::apply_update()
{
  const double lr = current_lr();
  const int step = state_.iteration + 1;
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  const float inv_batch = 1.0f / static_cast<float>(config_.batch_size);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var<float>& p = params_[i].second;
    Eigen::MatrixXf& w = p.mutable_value();
    if (p.grad().size() == 0)
      continue;
    w *= static_cast<float>(1.0 - lr * config_.weight_decay);
    const Eigen::MatrixXf g = p.grad() * inv_batch;
    m_[i] = static_cast<float>(b1) * m_[i] + static_cast<float>(1.0 - b1) * g;
    v_[i] = static_cast<float>(b2) * v_[i] + static_cast<float>(1.0 - b2) * g.cwiseAbs2();
    const float step_size = static_cast<float>(lr / c1);
    const float denom_scale = static_cast<float>(1.0 / std::sqrt(c2));
    w.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * denom_scale + static_cast<float>(config_.adam_eps));
  }
}

double Trainer::validate()
{
  nn::NoGradGuard no_grad;
  double total = 0.0;
  for (const Draw& d : val_draws_)
    total += draw_loss(model_, val_[d.image], d, sched_, config_.loss_space).value()(0, 0);
  return total / static_cast<double>(val_draws_.size());
}

io::Checkpoint Trainer::save_state() const
{
  nlohmann::json meta;
  meta["train"] = config_;
  meta["state"] = {{"iteration", state_.iteration},
                   {"epoch", state_.epoch},
                   {"best_val", state_.best_val},
                   {"has_best", state_.has_best},
                   {"rng", state_.rng_state}};
  io::Checkpoint ck = model_checkpoint(model_, meta);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.tensors.push_back({"adam_m/" + params_[i].first, m_[i]});
    ck.tensors.push_back({"adam_v/" + params_[i].first, v_[i]});
  }
  return ck;
}

void Trainer::load_state(const io::Checkpoint& ckpt)
{
  if (!ckpt.meta.contains("state") || !ckpt.meta.contains("train"))
    throw FormatError("checkpoint holds no training state", 0);
  const TrainConfig saved = ckpt.meta.at("train").get<TrainConfig>();
  if (!(saved == config_))
    throw ConfigError("resume: training configuration differs from the checkpoint's");
  if (!(ckpt.meta.at("net").get<net::NetConfig>() == model_.config))
    throw ConfigError("resume: network configuration differs from the checkpoint's");
  load_parameters(*model_.net, ckpt);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = ckpt.tensor("adam_m/" + params_[i].first);
    v_[i] = ckpt.tensor("adam_v/" + params_[i].first);
  }
  const auto& st = ckpt.meta.at("state");
  state_.iteration = st.at("iteration").get<int>();
  state_.epoch = st.at("epoch").get<int>();
  state_.best_val = st.at("best_val").get<double>();
  state_.has_best = st.at("has_best").get<bool>();
  state_.rng_state = st.at("rng").get<std::string>();
  set_rng_state(rng_, state_.rng_state);
  model_.net->set_version(ckpt.meta.value("version", std::uint64_t{0}));
  if (model_.copy) {
    model_.copy->sync_from(*model_.net);
    update_syncs_ = static_cast<std::uint64_t>(state_.iteration);
  }
}

// ---------------------------------------------------------------- fit

namespace {

std::string fmt(double x)
{
  std::ostringstream os;
  os << std::setprecision(9) << x;
  return os.str();
}

/// Keeps the header and the lines of iterations <= `last`.
void truncate_log(const fs::path& path, int last)
{
  std::ifstream in(path);
  if (!in)
    return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0]))) {
      keep.push_back(line);
      continue;
    }
    if (std::stoi(line.substr(0, line.find('\t'))) <= last)
      keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep)
    out << l << '\n';
}

} // namespace

FitResult fit(const TrainConfig& config, const net::NetConfig& net_config, net::Variant variant,
              const fs::path& manifest_path, const fs::path& out_dir, const FitOptions& options)
{
  config.validate();
  const io::Manifest manifest = io::read_manifest(manifest_path);
  auto train_items = io::load_split(manifest, "train");
  auto val_items = io::load_split(manifest, "val");
  if (train_items.empty() || val_items.empty())
    throw ConfigError("fit: manifest needs non-empty train and val splits");
  std::vector<FodImage> gts;
  for (const auto& it : train_items)
    gts.push_back(it.gt);
  const ScaleTable scale = compute_scale_table(gts);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create output directory (" + ec.message() + ")", out_dir.string());
  io::write_scale_table(out_dir / "scale.json", scale);

  FitResult res;
  res.best_path = out_dir / "best.ckpt";
  res.latest_path = out_dir / "latest.ckpt";
  res.log_path = out_dir / "train_log.tsv";

  Trainer trainer(make_model(net_config, variant, scale, config.seed), config, prepare_items(train_items, scale),
                  prepare_items(val_items, scale));
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const bool resuming = options.resume && fs::exists(res.latest_path);
  std::string last_ckpt = "none";
  if (resuming) {
    const io::Checkpoint ck = io::load_checkpoint(res.latest_path);
    trainer.load_state(ck);
    res.initial_val = ck.meta.at("initial_val").get<double>();
    truncate_log(res.log_path, trainer.state().iteration);
    last_ckpt = res.latest_path.string();
  } else {
    std::ofstream log(res.log_path, std::ios::trunc);
    if (!log)
      throw IoError("cannot write training log", res.log_path.string());
    log << "# variant " << net::variant_name(variant) << "\n";
    log << "iteration\tloss\tlr\tval\twallclock_s\n";
  }
  std::ofstream log(res.log_path, std::ios::app);
  if (!log)
    throw IoError("cannot append to training log", res.log_path.string());

  const auto save = [&](const fs::path& path) {
    io::Checkpoint ck = trainer.save_state();
    ck.meta["initial_val"] = res.initial_val;
    io::save_checkpoint(path, ck);
  };

  try {
    if (!resuming) {
      res.initial_val = trainer.validate();
      trainer.state().best_val = res.initial_val;
      trainer.state().has_best = true;
      log << 0 << "\t-\t" << fmt(trainer.current_lr()) << "\t" << fmt(res.initial_val) << "\t" << fmt(elapsed())
          << "\n"
          << std::flush;
      save(res.best_path);
      save(res.latest_path);
      last_ckpt = res.latest_path.string();
    }
    const int epoch_len = trainer.epoch_length();
    while (trainer.state().iteration < config.iterations) {
      if (options.stop_after && trainer.state().iteration >= *options.stop_after)
        break;
      const double lr = trainer.current_lr();
      const double loss = trainer.train_step();
      const int it = trainer.state().iteration;
      res.losses.push_back(loss);
      if (options.on_iteration)
        options.on_iteration(it, loss, lr);
      const bool epoch_end = it % epoch_len == 0 || it == config.iterations;
      std::string val_field = "-";
      if (epoch_end) {
        ++trainer.state().epoch;
        const double val = trainer.validate();
        val_field = fmt(val);
        if (!trainer.state().has_best || val < trainer.state().best_val) {
          trainer.state().best_val = val;
          trainer.state().has_best = true;
          save(res.best_path);
        }
      }
      log << it << "\t" << fmt(loss) << "\t" << fmt(lr) << "\t" << val_field << "\t" << fmt(elapsed()) << "\n"
          << std::flush;
      if (epoch_end) {
        save(res.latest_path);
        last_ckpt = res.latest_path.string();
      }
    }
  } catch (const Error& e) {
    throw Error(e.category(), std::string(e.what()) + " (last checkpoint: " + last_ckpt + ")");
  }
  res.best_val = trainer.state().best_val;
  res.iterations_done = trainer.state().iteration;
  return res;
}

} // namespace fodiff::train
