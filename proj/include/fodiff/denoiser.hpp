// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fodiff/fod_image.hpp"
#include "fodiff/nn/layers.hpp"
#include "fodiff/spharm.hpp"

/// Conditional 3-D U-Net denoiser with time and [L, V] volume encodings, and
/// the frequency-balanced cross-attention pathway: per-order averaged
/// condition volumes pass through a frozen copy of the network, get an
/// additive per-order weight, and are merged by a 1x1 convolution into the
/// key/value source of cross-attention.
namespace fodiff::net {

using nn::Mat;
using nn::Var;

/// Ablation ladder: unconditional, +condition volume, +volume encoding, full.
enum class Variant { uncond, vol, vol_enc, full };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct NetConfig {
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 4};
  std::vector<int> attention_levels{1, 2}; ///< level indices, 0 = finest
  int embed_dim = 128;
  int patch_size = 16;           ///< training crop edge (voxels)
  int inference_patch = 24;      ///< inference tile edge (voxels)
  int tile_overlap = 4;
  int norm_groups = 4;
  bool use_condition = true;
  bool use_volume_encoding = true;
  bool use_cross_attention = true;
  bool per_channel_order_weight = false; ///< e_m per channel instead of a scalar

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int channels(int level) const { return base_channels * channel_mult.at(level); }
  bool has_attention(int level) const;
  /// Throws InvalidArgument when the configuration cannot build a network.
  void validate() const;
  void apply_variant(Variant v);

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

/// Interleaved sin/cos position embedding: out[2i] = sin(value w_i),
/// out[2i+1] = cos(value w_i), w_i = 10000^(-2i/dim).
template <class S = double>
Eigen::Matrix<S, Eigen::Dynamic, 1> sinusoidal_embed(double value, int dim)
{
  if (dim <= 0 || dim % 2)
    throw InvalidArgument("sinusoidal_embed: dim must be positive and even, got " + std::to_string(dim));
  Eigen::Matrix<S, Eigen::Dynamic, 1> out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / dim);
    out[2 * i] = static_cast<S>(std::sin(value * w));
    out[2 * i + 1] = static_cast<S>(std::cos(value * w));
  }
  return out;
}

/// Condition channel: the corrupted normalised volume with masked voxels set
/// to 1, plus the mask itself as a separate channel.
template <class S>
struct ConditionPack {
  Mat<S> condition; ///< 1 x N
  Mat<S> mask;      ///< 1 x N, values in {0, 1}
};

template <class S, class D1, class D2>
ConditionPack<S> pack_condition(const Eigen::MatrixBase<D1>& volume, const Eigen::MatrixBase<D2>& mask)
{
  if (volume.size() != mask.size())
    throw InvalidArgument("pack_condition: volume and mask sizes differ");
  ConditionPack<S> p;
  p.condition = volume.reshaped(1, volume.size()).template cast<S>();
  p.mask = mask.reshaped(1, mask.size()).template cast<S>();
  for (Eigen::Index i = 0; i < p.mask.size(); ++i)
    if (p.mask(0, i) != S(0))
      p.condition(0, i) = S(1);
  return p;
}

/// Per-order mean of a 45 x N coefficient matrix: row o holds the mean of the
/// (4o + 1) volumes of order 2o. Row 0 is volume 0 unchanged.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, sh::kNumOrders, Eigen::Dynamic>
order_average(const Eigen::MatrixBase<Derived>& coeffs)
{
  if (coeffs.rows() != sh::kNumCoeffs)
    throw InvalidArgument("order_average: expected 45 volumes");
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, sh::kNumOrders, Eigen::Dynamic> out(sh::kNumOrders, coeffs.cols());
  out.row(0) = coeffs.row(0);
  for (int o = 1; o < sh::kNumOrders; ++o) {
    const int l = 2 * o;
    out.row(o) = coeffs.middleRows(sh::order_offset(l), 2 * l + 1).colwise().sum() / static_cast<S>(2 * l + 1);
  }
  return out;
}

/// Volume encoding fed to the frozen copy for an order's averaged volume: the
/// first volume of that order.
inline sh::VolumeIndex representative_volume(int order) { return sh::volume_index(sh::order_offset(order)); }

/// Decoder self-attention outputs of the frozen copy, per order and per
/// attention level.
template <class S>
struct CrossFeatureBank {
  std::vector<int> levels;                            ///< attention levels, ascending
  std::vector<std::array<Mat<S>, sh::kNumOrders>> features; ///< [level][order]
};

/// e_m = MLP(sinusoidal(m)); E_m = F_m + e_m J; K/V = Conv1x1(stack_m E_m).
template <class S>
struct OrderBalance {
  nn::Linear<S> mlp1, mlp2;
  nn::Linear<S> combine; ///< 5C -> C, applied per voxel

  OrderBalance() = default;
  OrderBalance(int channels, int embed_dim, bool per_channel, Rng& rng)
      : mlp1(embed_dim, embed_dim, rng), mlp2(embed_dim, per_channel ? channels : 1, rng),
        combine(sh::kNumOrders * channels, channels, rng)
  {
  }

  Var<S> order_weight(int order) const
  {
    const Var<S> emb(sinusoidal_embed<S>(order, static_cast<int>(mlp1.weight.cols())));
    return mlp2(nn::silu(mlp1(emb)));
  }

  /// Stack of E_m = F_m + e_m J over the five orders (5C x N).
  Var<S> encoded(const std::array<Mat<S>, sh::kNumOrders>& features) const
  {
    std::vector<Var<S>> parts;
    for (int o = 0; o < sh::kNumOrders; ++o) {
      if (features[o].rows() != features[0].rows() || features[o].cols() != features[0].cols())
        throw InvalidArgument("order_balance_combine: feature maps differ in shape");
      parts.push_back(nn::add_broadcast(Var<S>(features[o]), order_weight(2 * o)));
    }
    return nn::concat_rows(parts);
  }

  Var<S> operator()(const std::array<Mat<S>, sh::kNumOrders>& features) const { return combine(encoded(features)); }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    mlp1.visit(prefix + ".mlp1", f);
    mlp2.visit(prefix + ".mlp2", f);
    combine.visit(prefix + ".combine", f);
  }
};

template <class S>
class Denoiser {
public:
  using Scalar = S;

  Denoiser() = default;
  Denoiser(const NetConfig& config, std::uint64_t seed) : config_(config)
  {
    config_.validate();
    Rng rng = split_rng(seed, 0x4e4e);
    const int E = config_.embed_dim;
    const int G = config_.norm_groups;
    const int L = config_.levels();
    time1_ = nn::Linear<S>(E, E, rng);
    time2_ = nn::Linear<S>(E, E, rng);
    vol1_ = nn::Linear<S>(E, E, rng);
    vol2_ = nn::Linear<S>(E, E, rng);
    conv_in_ = nn::Conv3d<S>(3, config_.channels(0), 3, rng);
    enc_.resize(L);
    dec_.resize(L);
    int prev = config_.channels(0);
    for (int l = 0; l < L; ++l) {
      const int c = config_.channels(l);
      enc_[l].res = nn::ResBlock<S>(prev, c, E, G, rng);
      if (config_.has_attention(l)) {
        enc_[l].self_attn = nn::Attention<S>(c, c, G, rng);
        enc_[l].cross_attn = nn::Attention<S>(c, c, G, rng);
      }
      prev = c;
    }
    for (int l = L - 1; l >= 0; --l) {
      const int c = config_.channels(l);
      dec_[l].res = nn::ResBlock<S>(2 * c, c, E, G, rng);
      if (config_.has_attention(l)) {
        dec_[l].self_attn = nn::Attention<S>(c, c, G, rng);
        dec_[l].cross_attn = nn::Attention<S>(c, c, G, rng);
        balance_.emplace(l, OrderBalance<S>(c, E, config_.per_channel_order_weight, rng));
      }
      if (l > 0)
        dec_[l].up = nn::Conv3d<S>(c, config_.channels(l - 1), 3, rng);
    }
    out_norm_ = nn::GroupNorm<S>(config_.channels(0), G);
    out_conv_ = nn::Conv3d<S>(config_.channels(0), 1, 3, rng);
  }

  const NetConfig& config() const { return config_; }

  /// Calls f(name, Var&) for every parameter, in a fixed order.
  template <class F>
  void visit(F&& f)
  {
    time1_.visit("time.mlp1", f);
    time2_.visit("time.mlp2", f);
    vol1_.visit("volume.mlp1", f);
    vol2_.visit("volume.mlp2", f);
    conv_in_.visit("conv_in", f);
    for (int l = 0; l < config_.levels(); ++l) {
      const std::string p = "enc" + std::to_string(l);
      enc_[l].res.visit(p + ".res", f);
      if (config_.has_attention(l)) {
        enc_[l].self_attn.visit(p + ".self_attn", f);
        enc_[l].cross_attn.visit(p + ".cross_attn", f);
      }
    }
    for (int l = config_.levels() - 1; l >= 0; --l) {
      const std::string p = "dec" + std::to_string(l);
      dec_[l].res.visit(p + ".res", f);
      if (config_.has_attention(l)) {
        dec_[l].self_attn.visit(p + ".self_attn", f);
        dec_[l].cross_attn.visit(p + ".cross_attn", f);
        balance_.at(l).visit(p + ".order_balance", f);
      }
      if (l > 0)
        dec_[l].up.visit(p + ".up", f);
    }
    out_norm_.visit("out.norm", f);
    out_conv_.visit("out.conv", f);
  }

  std::vector<std::pair<std::string, Var<S>>> parameters()
  {
    std::vector<std::pair<std::string, Var<S>>> out;
    visit([&](const std::string& n, Var<S>& v) { out.emplace_back(n, v); });
    return out;
  }

  std::size_t parameter_count()
  {
    std::size_t n = 0;
    visit([&](const std::string&, Var<S>& v) { n += static_cast<std::size_t>(v.value().size()); });
    return n;
  }

  /// Counter bumped after each optimizer update of this network.
  std::uint64_t version() const { return version_; }
  void mark_updated() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  /// Makes every parameter a constant (no gradient recorded).
  void freeze()
  {
    visit([](const std::string&, Var<S>& v) { v.node()->requires_grad = false; });
  }

  /// MLP(concat(sin(L), sin(V))), embed_dim x 1.
  Var<S> volume_encoding(const sh::VolumeIndex& vol) const
  {
    if (vol.order < 0 || vol.order > sh::kLmax || vol.order % 2 || vol.m_index < 0 ||
        vol.m_index > 2 * vol.order || vol.flat != sh::order_offset(vol.order) + vol.m_index)
      throw InvalidArgument("volume_encode: invalid (L, V) pair");
    const int half = config_.embed_dim / 2;
    Mat<S> in(config_.embed_dim, 1);
    in << sinusoidal_embed<S>(vol.order, half), sinusoidal_embed<S>(vol.flat, half);
    return vol2_(nn::silu(vol1_(Var<S>(std::move(in)))));
  }

  Var<S> time_encoding(int t) const
  {
    return time2_(nn::silu(time1_(Var<S>(sinusoidal_embed<S>(t, config_.embed_dim)))));
  }

  /// Denoiser input channels [x_t, condition, mask] (3 x N). Condition and mask
  /// rows are zero when the configuration is unconditional.
  Mat<S> assemble_input(const Mat<S>& x_t, const ConditionPack<S>& pack) const
  {
    Mat<S> in = Mat<S>::Zero(3, x_t.cols());
    in.row(0) = x_t;
    if (config_.use_condition) {
      in.row(1) = pack.condition;
      in.row(2) = pack.mask;
    }
    return in;
  }

  /// Combined key/value maps per attention level from a feature bank.
  std::vector<Var<S>> combine_bank(const CrossFeatureBank<S>& bank) const
  {
    std::vector<Var<S>> kv;
    for (std::size_t i = 0; i < bank.levels.size(); ++i)
      kv.push_back(balance_.at(bank.levels[i])(bank.features[i]));
    return kv;
  }

  const OrderBalance<S>& order_balance(int level) const { return balance_.at(level); }
  OrderBalance<S>& order_balance(int level) { return balance_.at(level); }

  /// v prediction (1 x N). `cross_kv` holds one map per attention level (from
  /// combine_bank) and is ignored unless cross-attention is enabled.
  Var<S> forward(const Mat<S>& input, const Grid3& grid, int model_t, const sh::VolumeIndex& vol,
                 const std::vector<Var<S>>* cross_kv) const
  {
    check_input(input, grid);
    if (model_t < 0)
      throw InvalidArgument("denoise_forward: negative timestep");
    const bool use_cross = config_.use_cross_attention && cross_kv != nullptr;
    if (config_.use_cross_attention && cross_kv == nullptr)
      throw InvalidArgument("denoise_forward: cross-attention enabled but no key/value maps given");
    if (use_cross && cross_kv->size() != config_.attention_levels.size())
      throw InvalidArgument("denoise_forward: one key/value map per attention level is required");
    return run(input, grid, model_t, vol, use_cross ? cross_kv : nullptr, nullptr);
  }

  /// Decoder self-attention outputs at each attention level (ascending level),
  /// without cross-attention. Runs only as far as the finest attention level.
  std::vector<Mat<S>> decoder_features(const Mat<S>& input, const Grid3& grid, int model_t,
                                       const sh::VolumeIndex& vol) const
  {
    check_input(input, grid);
    std::map<int, Mat<S>> captured;
    run(input, grid, model_t, vol, nullptr, &captured);
    std::vector<Mat<S>> out;
    for (auto& [l, m] : captured)
      out.push_back(std::move(m));
    return out;
  }

  /// Grid at a level for a given input grid.
  Grid3 level_grid(const Grid3& g, int level) const
  {
    Grid3 out = g;
    for (int i = 0; i < level; ++i)
      out = nn::half_grid(out);
    return out;
  }

private:
  struct EncLevel {
    nn::ResBlock<S> res;
    nn::Attention<S> self_attn, cross_attn;
  };
  struct DecLevel {
    nn::ResBlock<S> res;
    nn::Attention<S> self_attn, cross_attn;
    nn::Conv3d<S> up;
  };

  void check_input(const Mat<S>& input, const Grid3& grid) const
  {
    if (input.rows() != 3 || input.cols() != grid.size())
      throw InvalidArgument("denoise_forward: input must be 3 x N for the given grid");
    const int f = 1 << (config_.levels() - 1);
    if (grid.nx % f || grid.ny % f || grid.nz % f)
      throw InvalidArgument("denoise_forward: grid dimensions must be divisible by " + std::to_string(f));
  }

  const Var<S>& kv_for(const std::vector<Var<S>>& kv, int level) const
  {
    for (std::size_t i = 0; i < config_.attention_levels.size(); ++i)
      if (config_.attention_levels[i] == level)
        return kv[i];
    throw InternalError("no key/value map for level " + std::to_string(level));
  }

  Var<S> run(const Mat<S>& input, const Grid3& grid, int model_t, const sh::VolumeIndex& vol,
             const std::vector<Var<S>>* kv, std::map<int, Mat<S>>* capture) const
  {
    Var<S> emb = time_encoding(model_t);
    if (config_.use_volume_encoding)
      emb = nn::add(emb, volume_encoding(vol));
    const Var<S> emb_act = nn::silu(emb);

    const int L = config_.levels();
    std::vector<Grid3> grids(L);
    grids[0] = grid;
    for (int l = 1; l < L; ++l)
      grids[l] = nn::half_grid(grids[l - 1]);

    int finest_attention = L;
    for (int l : config_.attention_levels)
      finest_attention = std::min(finest_attention, l);

    Var<S> h = conv_in_(Var<S>(input), grid);
    std::vector<Var<S>> skips(L);
    for (int l = 0; l < L; ++l) {
      h = enc_[l].res(h, grids[l], emb_act);
      if (config_.has_attention(l)) {
        h = enc_[l].self_attn(h);
        if (kv)
          h = enc_[l].cross_attn(h, &kv_for(*kv, l));
      }
      skips[l] = h;
      if (l + 1 < L)
        h = nn::avg_pool2(h, grids[l]);
    }
    for (int l = L - 1; l >= 0; --l) {
      h = dec_[l].res(nn::concat_rows<S>({h, skips[l]}), grids[l], emb_act);
      if (config_.has_attention(l)) {
        h = dec_[l].self_attn(h);
        if (capture) {
          (*capture)[l] = h.value();
          if (l == finest_attention)
            return h;
        }
        if (kv)
          h = dec_[l].cross_attn(h, &kv_for(*kv, l));
      }
      if (l > 0)
        h = dec_[l].up(nn::upsample2(h, grids[l]), grids[l - 1]);
    }
    return out_conv_(nn::silu(out_norm_(h)), grid);
  }

  NetConfig config_;
  std::uint64_t version_ = 0;
  nn::Linear<S> time1_, time2_, vol1_, vol2_;
  nn::Conv3d<S> conv_in_;
  std::vector<EncLevel> enc_;
  std::vector<DecLevel> dec_;
  std::map<int, OrderBalance<S>> balance_;
  nn::GroupNorm<S> out_norm_;
  nn::Conv3d<S> out_conv_;
};

/// Frozen copy of a denoiser used as the cross-attention feature extractor.
/// Its parameters never require gradients; `sync_from` copies the main
/// network's values and records the main network's version.
template <class S>
class FrozenCopy {
public:
  FrozenCopy() = default;
  explicit FrozenCopy(const Denoiser<S>& main) : net_(main.config(), 0)
  {
    net_.freeze();
    synced_ = false;
  }

  void sync_from(Denoiser<S>& main)
  {
    if (!(main.config() == net_.config()))
      throw InvalidArgument("sync_copied_net: architecture mismatch");
    auto src = main.parameters();
    auto dst = net_.parameters();
    if (src.size() != dst.size())
      throw InvalidArgument("sync_copied_net: architecture mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].first != dst[i].first || src[i].second.rows() != dst[i].second.rows() ||
          src[i].second.cols() != dst[i].second.cols())
        throw InvalidArgument("sync_copied_net: parameter " + src[i].first + " differs");
      dst[i].second.mutable_value() = src[i].second.value();
    }
    synced_version_ = main.version();
    synced_ = true;
    ++sync_count_;
  }

  bool in_sync_with(const Denoiser<S>& main) const { return synced_ && synced_version_ == main.version(); }
  std::uint64_t sync_count() const { return sync_count_; }
  std::uint64_t synced_version() const { return synced_version_; }
  Denoiser<S>& net() { return net_; }
  const Denoiser<S>& net() const { return net_; }

  /// Features of the order-averaged condition volumes at t = 0. Throws
  /// InternalError when the copy lags behind `main`.
  CrossFeatureBank<S> extract(const Denoiser<S>& main, const Mat<S>& order_avg, const Mat<S>& mask,
                              const Grid3& grid) const
  {
    if (!in_sync_with(main))
      throw InternalError("extract_order_features: copied network is out of sync (copy at version " +
                          std::to_string(synced_version_) + ", main at " + std::to_string(main.version()) + ")");
    if (order_avg.rows() != sh::kNumOrders || order_avg.cols() != grid.size() || mask.size() != grid.size())
      throw InvalidArgument("extract_order_features: expected 5 x N averaged volumes and a matching mask");
    nn::NoGradGuard no_grad;
    CrossFeatureBank<S> bank;
    bank.levels = net_.config().attention_levels;
    std::sort(bank.levels.begin(), bank.levels.end());
    bank.features.resize(bank.levels.size());
    for (int o = 0; o < sh::kNumOrders; ++o) {
      Mat<S> in(3, grid.size());
      in.row(0) = order_avg.row(o);
      in.row(1) = order_avg.row(o);
      in.row(2) = mask.reshaped(1, mask.size());
      auto feats = net_.decoder_features(in, grid, 0, representative_volume(2 * o));
      for (std::size_t i = 0; i < feats.size(); ++i)
        bank.features[i][o] = std::move(feats[i]);
    }
    return bank;
  }

private:
  Denoiser<S> net_;
  std::uint64_t synced_version_ = 0;
  std::uint64_t sync_count_ = 0;
  bool synced_ = false;
};

} // namespace fodiff::net
