// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fodiff/denoiser.hpp"
#include "fodiff/diffusion.hpp"

namespace test {

/// A small full-variant network on 8^3 inputs.
inline fodiff::net::NetConfig toy_config()
{
  fodiff::net::NetConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2};
  c.attention_levels = {1};
  c.embed_dim = 8;
  c.patch_size = 8;
  c.inference_patch = 8;
  c.tile_overlap = 2;
  c.norm_groups = 2;
  return c;
}

/// Inputs of one training draw on an 8^3 crop.
struct ToyDraw {
  fodiff::Grid3 grid{8, 8, 8};
  Eigen::MatrixXd x0, condition, order_avg;
  Eigen::RowVectorXd mask;
  Eigen::MatrixXd eps;
  int t = 300;
  fodiff::sh::VolumeIndex vol = fodiff::sh::volume_index(7);
};

inline ToyDraw toy_draw(std::uint64_t seed)
{
  ToyDraw d;
  fodiff::Rng rng = fodiff::split_rng(seed, 0);
  const auto n = d.grid.size();
  d.x0.resize(1, n);
  d.eps.resize(1, n);
  Eigen::MatrixXd coeffs(fodiff::sh::kNumCoeffs, n);
  fodiff::fill_gaussian(coeffs, rng);
  coeffs *= 0.3;
  fodiff::fill_gaussian(d.eps, rng);
  d.x0 = coeffs.row(d.vol.flat);
  d.mask = Eigen::RowVectorXd::Zero(n);
  for (int i = 2; i < 5; ++i)
    for (int j = 3; j < 6; ++j)
      for (int k = 2; k < 6; ++k)
        d.mask[d.grid.index(i, j, k)] = 1.0;
  d.condition = coeffs;
  for (Eigen::Index v = 0; v < n; ++v)
    if (d.mask[v] != 0.0)
      d.condition.col(v).setOnes();
  d.order_avg = fodiff::net::order_average(d.condition);
  return d;
}

/// The training loss of one draw, built from the public pieces of the network.
inline fodiff::nn::Var<double> toy_loss(const fodiff::net::Denoiser<double>& net,
                                        const fodiff::net::FrozenCopy<double>& copy, const ToyDraw& d)
{
  static const auto sched = fodiff::diffusion::linear_schedule();
  const Eigen::MatrixXd xt = fodiff::diffusion::q_sample(d.x0, d.t, d.eps, sched);
  const auto pack = fodiff::net::pack_condition<double>(d.condition.row(d.vol.flat), d.mask);
  std::vector<fodiff::nn::Var<double>> kv;
  if (net.config().use_cross_attention)
    kv = net.combine_bank(copy.extract(net, d.order_avg, d.mask, d.grid));
  const auto v = net.forward(net.assemble_input(xt, pack), d.grid, d.t, d.vol,
                             net.config().use_cross_attention ? &kv : nullptr);
  const Eigen::MatrixXd target = fodiff::diffusion::v_target(d.x0, d.eps, d.t, sched);
  return fodiff::nn::masked_weighted_l1(v, target, Eigen::MatrixXd(d.mask));
}

} // namespace test
