// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "fodiff/nn/autograd.hpp"
#include "fodiff/random.hpp"

namespace fodiff::nn {

namespace detail {

template <class S>
Var<S> uniform_param(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng)
{
  Mat<S> m(rows, cols);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      m(i, j) = static_cast<S>(u(rng));
  return Var<S>(std::move(m), true);
}

} // namespace detail

/// y = W x + b. Applied to a C x N feature map this is a 1x1x1 convolution.
template <class S>
struct Linear {
  Var<S> weight, bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng)
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = detail::uniform_param<S>(out, in, bound, rng);
    bias = detail::uniform_param<S>(out, 1, bound, rng);
  }
  Var<S> operator()(const Var<S>& x) const { return add_broadcast(matmul(weight, x), bias); }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <class S>
struct Conv3d {
  Var<S> weight, bias;
  int kernel = 3;

  Conv3d() = default;
  Conv3d(int in, int out, int k, Rng& rng) : kernel(k)
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k * k));
    weight = detail::uniform_param<S>(out, in * k * k * k, bound, rng);
    bias = detail::uniform_param<S>(out, 1, bound, rng);
  }
  Var<S> operator()(const Var<S>& x, const Grid3& g) const { return conv3d(x, g, weight, bias, kernel); }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <class S>
struct GroupNorm {
  Var<S> gamma, beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(int channels, int g)
      : gamma(Mat<S>::Ones(channels, 1), true), beta(Mat<S>::Zero(channels, 1), true), groups(g)
  {
  }
  Var<S> operator()(const Var<S>& x) const { return group_norm(x, gamma, beta, groups); }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

/// GN -> SiLU -> conv -> + embedding projection -> GN -> SiLU -> conv, plus a
/// (1x1 projected when channels change) residual path.
template <class S>
struct ResBlock {
  GroupNorm<S> norm1, norm2;
  Conv3d<S> conv1, conv2;
  Linear<S> emb_proj;
  std::optional<Conv3d<S>> skip;

  ResBlock() = default;
  ResBlock(int in, int out, int emb_dim, int groups, Rng& rng)
      : norm1(in, groups), norm2(out, groups), conv1(in, out, 3, rng), conv2(out, out, 3, rng),
        emb_proj(emb_dim, out, rng)
  {
    if (in != out)
      skip.emplace(in, out, 1, rng);
  }

  Var<S> operator()(const Var<S>& x, const Grid3& g, const Var<S>& emb_act) const
  {
    Var<S> h = conv1(silu(norm1(x)), g);
    h = add_broadcast(h, emb_proj(emb_act));
    h = conv2(silu(norm2(h)), g);
    return add(skip ? (*skip)(x, g) : x, h);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    norm1.visit(prefix + ".norm1", f);
    conv1.visit(prefix + ".conv1", f);
    emb_proj.visit(prefix + ".emb", f);
    norm2.visit(prefix + ".norm2", f);
    conv2.visit(prefix + ".conv2", f);
    if (skip)
      skip->visit(prefix + ".skip", f);
  }
};

/// Single-head dot-product attention over voxels with a residual connection.
/// Queries come from the normalised input; keys and values from the same
/// normalised input (self-attention) or from `context` (cross-attention).
template <class S>
struct Attention {
  GroupNorm<S> norm;
  Linear<S> q, k, v, out;

  Attention() = default;
  Attention(int channels, int context_channels, int groups, Rng& rng)
      : norm(channels, groups), q(channels, channels, rng), k(context_channels, channels, rng),
        v(context_channels, channels, rng), out(channels, channels, rng)
  {
  }

  Var<S> operator()(const Var<S>& x, const Var<S>* context = nullptr) const
  {
    const Var<S> h = norm(x);
    const Var<S>& src = context ? *context : h;
    const Var<S> qq = q(h);
    const Var<S> kk = k(src);
    const Var<S> vv = v(src);
    const S scale_factor = S(1) / std::sqrt(static_cast<S>(qq.rows()));
    const Var<S> weights = softmax_rows(scale(matmul(qq, kk, true, false), scale_factor)); // N x M
    const Var<S> attended = matmul(vv, weights, false, true);                              // C x N
    return add(x, out(attended));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f)
  {
    norm.visit(prefix + ".norm", f);
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    out.visit(prefix + ".out", f);
  }
};

} // namespace fodiff::nn
