// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fodiff/errors.hpp"
#include "fodiff/fod_image.hpp"

/// Minimal tape-based reverse-mode differentiation over dense Eigen matrices.
///
/// Feature maps are C x N matrices (channels x voxels, voxels in C order of a
/// Grid3); vectors are D x 1. Every op records a closure that maps the output
/// gradient to its inputs' gradients, only when some input requires a gradient
/// and gradient recording is enabled on the calling thread.
namespace fodiff::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

inline bool& grad_enabled()
{
  thread_local bool enabled = true;
  return enabled;
}

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard() : previous_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

template <class S>
struct Node {
  Mat<S> value;
  Mat<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat<S>&)> backward;

  template <class Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g)
  {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

template <class S>
class Var {
public:
  using Scalar = S;

  Var() = default;
  explicit Var(Mat<S> value, bool requires_grad = false) : node_(std::make_shared<Node<S>>())
  {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Mat<S>& value() const { return node_->value; }
  Mat<S>& mutable_value() { return node_->value; }
  /// Gradient after backward(); empty when none reached this node.
  const Mat<S>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node<S>>& node() const { return node_; }

private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <class S, class Backward>
Var<S> record(Mat<S> value, std::initializer_list<const Var<S>*> inputs, Backward&& backward)
{
  Var<S> out(std::move(value));
  if (!grad_enabled())
    return out;
  bool any = false;
  for (const auto* in : inputs)
    any = any || in->requires_grad();
  if (!any)
    return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto* in : inputs)
    if (in->requires_grad())
      n.parents.push_back(in->node());
  n.backward = std::forward<Backward>(backward);
  return out;
}

} // namespace detail

/// Accumulates d(loss)/d(node) into every reachable node that requires a
/// gradient. `loss` must be 1 x 1.
template <class S>
void backward(const Var<S>& loss)
{
  if (loss.rows() != 1 || loss.cols() != 1)
    throw InvalidArgument("backward: loss must be a scalar");
  if (!loss.requires_grad())
    return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (seen.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Mat<S>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && n->grad.size() != 0)
      n->backward(n->grad);
  }
}

// ---------------------------------------------------------------- elementwise

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("add: shape mismatch");
  auto na = a.node(), nb = b.node();
  return detail::record<S>(a.value() + b.value(), {&a, &b}, [na, nb](const Mat<S>& g) {
    if (na->requires_grad)
      na->accumulate(g);
    if (nb->requires_grad)
      nb->accumulate(g);
  });
}

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b)
{
  return add(a, b);
}

template <class S>
Var<S> scale(const Var<S>& x, S c)
{
  auto nx = x.node();
  return detail::record<S>(c * x.value(), {&x}, [nx, c](const Mat<S>& g) { nx->accumulate(c * g); });
}

/// x (C x N) plus v broadcast over columns; v is C x 1 or 1 x 1.
template <class S>
Var<S> add_broadcast(const Var<S>& x, const Var<S>& v)
{
  if (v.cols() != 1 || (v.rows() != x.rows() && v.rows() != 1))
    throw InvalidArgument("add_broadcast: v must be C x 1 or 1 x 1");
  Mat<S> out = x.value();
  if (v.rows() == 1)
    out.array() += v.value()(0, 0);
  else
    out.colwise() += v.value().col(0);
  auto nx = x.node(), nv = v.node();
  return detail::record<S>(std::move(out), {&x, &v}, [nx, nv](const Mat<S>& g) {
    if (nx->requires_grad)
      nx->accumulate(g);
    if (nv->requires_grad) {
      if (nv->value.rows() == 1)
        nv->accumulate(Mat<S>::Constant(1, 1, g.sum()));
      else
        nv->accumulate(g.rowwise().sum());
    }
  });
}

template <class S>
Var<S> silu(const Var<S>& x)
{
  const Mat<S> sig = (S(1) + (-x.value().array()).exp()).inverse().matrix();
  Mat<S> out = x.value().cwiseProduct(sig);
  auto nx = x.node();
  return detail::record<S>(std::move(out), {&x}, [nx, sig](const Mat<S>& g) {
    const auto xa = nx->value.array();
    const auto sa = sig.array();
    nx->accumulate((g.array() * sa * (S(1) + xa * (S(1) - sa))).matrix());
  });
}

// ---------------------------------------------------------------- linear algebra

/// op(a) * op(b), where op transposes when the flag is set.
template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b, bool transpose_a = false, bool transpose_b = false)
{
  const Eigen::Index ar = transpose_a ? a.cols() : a.rows();
  const Eigen::Index ac = transpose_a ? a.rows() : a.cols();
  const Eigen::Index br = transpose_b ? b.cols() : b.rows();
  if (ac != br)
    throw InvalidArgument("matmul: inner dimensions differ");
  Mat<S> out(ar, transpose_b ? b.rows() : b.cols());
  if (!transpose_a && !transpose_b)
    out.noalias() = a.value() * b.value();
  else if (transpose_a && !transpose_b)
    out.noalias() = a.value().transpose() * b.value();
  else if (!transpose_a && transpose_b)
    out.noalias() = a.value() * b.value().transpose();
  else
    out.noalias() = a.value().transpose() * b.value().transpose();
  auto na = a.node(), nb = b.node();
  return detail::record<S>(std::move(out), {&a, &b}, [na, nb, transpose_a, transpose_b](const Mat<S>& g) {
    const Mat<S>& A = na->value;
    const Mat<S>& B = nb->value;
    if (na->requires_grad) {
      // d op(A) = g op(B)^T
      Mat<S> dopa = transpose_b ? Mat<S>(g * B) : Mat<S>(g * B.transpose());
      if (transpose_a)
        na->accumulate(dopa.transpose());
      else
        na->accumulate(dopa);
    }
    if (nb->requires_grad) {
      // d op(B) = op(A)^T g
      Mat<S> dopb = transpose_a ? Mat<S>(A * g) : Mat<S>(A.transpose() * g);
      if (transpose_b)
        nb->accumulate(dopb.transpose());
      else
        nb->accumulate(dopb);
    }
  });
}

/// Row-stacks inputs with equal column counts.
template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts)
{
  if (parts.empty())
    throw InvalidArgument("concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw InvalidArgument("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat<S> out(rows, cols);
  Eigen::Index r = 0;
  std::vector<std::shared_ptr<Node<S>>> nodes;
  bool any = false;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    nodes.push_back(p.node());
    any = any || p.requires_grad();
  }
  Var<S> res(std::move(out));
  if (!grad_enabled() || !any)
    return res;
  auto& n = *res.node();
  n.requires_grad = true;
  for (const auto& nd : nodes)
    if (nd->requires_grad)
      n.parents.push_back(nd);
  n.backward = [nodes](const Mat<S>& g) {
    Eigen::Index r0 = 0;
    for (const auto& nd : nodes) {
      if (nd->requires_grad)
        nd->accumulate(g.middleRows(r0, nd->value.rows()));
      r0 += nd->value.rows();
    }
  };
  return res;
}

/// Softmax across each row.
template <class S>
Var<S> softmax_rows(const Var<S>& x)
{
  Mat<S> p = (x.value().colwise() - x.value().rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  auto nx = x.node();
  Mat<S> keep = p;
  return detail::record<S>(std::move(p), {&x}, [nx, keep](const Mat<S>& g) {
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dot = g.cwiseProduct(keep).rowwise().sum();
    nx->accumulate(keep.cwiseProduct(Mat<S>(g.colwise() - dot)));
  });
}

// ---------------------------------------------------------------- volumetric ops

namespace detail {

/// Neighbour column for each (voxel, kernel offset) pair stored voxel-major,
/// -1 outside the grid.
inline std::vector<Eigen::Index> build_neighbour_table(const Grid3& g, int k)
{
  const int r = k / 2;
  const int kk = k * k * k;
  std::vector<Eigen::Index> nb(static_cast<std::size_t>(kk * g.size()), -1);
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.ny; ++j)
      for (int l = 0; l < g.nz; ++l) {
        const Eigen::Index n = g.index(i, j, l);
        int o = 0;
        for (int di = -r; di <= r; ++di)
          for (int dj = -r; dj <= r; ++dj)
            for (int dl = -r; dl <= r; ++dl, ++o)
              if (g.contains(i + di, j + dj, l + dl))
                nb[static_cast<std::size_t>(n * kk + o)] = g.index(i + di, j + dj, l + dl);
      }
  return nb;
}

/// Cached per thread; grids and kernel sizes come from a small fixed set.
inline std::shared_ptr<const std::vector<Eigen::Index>> neighbour_table(const Grid3& g, int k)
{
  thread_local std::map<std::array<int, 4>, std::shared_ptr<const std::vector<Eigen::Index>>> cache;
  auto& slot = cache[{g.nx, g.ny, g.nz, k}];
  if (!slot)
    slot = std::make_shared<const std::vector<Eigen::Index>>(build_neighbour_table(g, k));
  return slot;
}

} // namespace detail

/// Same-size 3-D convolution with zero padding. x: Cin x N, weight:
/// Cout x (k^3 Cin) with rows of [offset-major, channel-minor], bias: Cout x 1.
template <class S>
Var<S> conv3d(const Var<S>& x, const Grid3& grid, const Var<S>& weight, const Var<S>& bias, int k)
{
  const Eigen::Index cin = x.rows();
  const Eigen::Index n = grid.size();
  if (x.cols() != n)
    throw InvalidArgument("conv3d: input does not match grid");
  if (k % 2 == 0 || weight.cols() != k * k * k * cin || bias.rows() != weight.rows())
    throw InvalidArgument("conv3d: weight shape mismatch");
  if (k == 1) {
    Mat<S> out = weight.value() * x.value();
    out.colwise() += bias.value().col(0);
    auto nx = x.node(), nw = weight.node(), nb = bias.node();
    return detail::record<S>(std::move(out), {&x, &weight, &bias}, [nx, nw, nb](const Mat<S>& g) {
      if (nw->requires_grad)
        nw->accumulate(g * nx->value.transpose());
      if (nb->requires_grad)
        nb->accumulate(g.rowwise().sum());
      if (nx->requires_grad)
        nx->accumulate(nw->value.transpose() * g);
    });
  }
  const int kk = k * k * k;
  auto table = detail::neighbour_table(grid, k);
  Mat<S> cols(kk * cin, n);
  const S* xs = x.value().data();
  for (Eigen::Index c = 0; c < n; ++c) {
    const Eigen::Index* nb = table->data() + c * kk;
    S* dst = cols.data() + c * kk * cin;
    for (int o = 0; o < kk; ++o, dst += cin) {
      if (nb[o] >= 0)
        std::copy_n(xs + nb[o] * cin, cin, dst);
      else
        std::fill_n(dst, cin, S(0));
    }
  }
  Mat<S> out(weight.rows(), n);
  out.noalias() = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  auto nx = x.node(), nw = weight.node(), nb = bias.node();
  const bool need = grad_enabled() && (x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  auto keep = need ? std::make_shared<Mat<S>>(std::move(cols)) : nullptr;
  return detail::record<S>(std::move(out), {&x, &weight, &bias},
                           [nx, nw, nb, keep, table, kk, cin, n](const Mat<S>& g) {
                             if (nw->requires_grad)
                               nw->accumulate(g * keep->transpose());
                             if (nb->requires_grad)
                               nb->accumulate(g.rowwise().sum());
                             if (nx->requires_grad) {
                               const Mat<S> dcols = nw->value.transpose() * g;
                               Mat<S> dx = Mat<S>::Zero(cin, n);
                               for (Eigen::Index c = 0; c < n; ++c) {
                                 const Eigen::Index* nb = table->data() + c * kk;
                                 const S* src = dcols.data() + c * kk * cin;
                                 for (int o = 0; o < kk; ++o, src += cin)
                                   if (nb[o] >= 0) {
                                     S* d = dx.data() + nb[o] * cin;
                                     for (Eigen::Index ch = 0; ch < cin; ++ch)
                                       d[ch] += src[ch];
                                   }
                               }
                               nx->accumulate(dx);
                             }
                           });
}

/// Grid after 2x downsampling (dimensions must be even).
inline Grid3 half_grid(const Grid3& g)
{
  if (g.nx % 2 || g.ny % 2 || g.nz % 2)
    throw InvalidArgument("downsampling needs even grid dimensions");
  return {g.nx / 2, g.ny / 2, g.nz / 2};
}

/// 2x2x2 average pooling.
template <class S>
Var<S> avg_pool2(const Var<S>& x, const Grid3& grid)
{
  const Grid3 h = half_grid(grid);
  Mat<S> out = Mat<S>::Zero(x.rows(), h.size());
  for (int i = 0; i < grid.nx; ++i)
    for (int j = 0; j < grid.ny; ++j)
      for (int k = 0; k < grid.nz; ++k)
        out.col(h.index(i / 2, j / 2, k / 2)) += x.value().col(grid.index(i, j, k));
  out *= S(0.125);
  auto nx = x.node();
  return detail::record<S>(std::move(out), {&x}, [nx, grid, h](const Mat<S>& g) {
    Mat<S> dx(g.rows(), grid.size());
    for (int i = 0; i < grid.nx; ++i)
      for (int j = 0; j < grid.ny; ++j)
        for (int k = 0; k < grid.nz; ++k)
          dx.col(grid.index(i, j, k)) = S(0.125) * g.col(h.index(i / 2, j / 2, k / 2));
    nx->accumulate(dx);
  });
}

/// Nearest-neighbour 2x upsampling from `coarse` to twice its size.
template <class S>
Var<S> upsample2(const Var<S>& x, const Grid3& coarse)
{
  const Grid3 fine{coarse.nx * 2, coarse.ny * 2, coarse.nz * 2};
  Mat<S> out(x.rows(), fine.size());
  for (int i = 0; i < fine.nx; ++i)
    for (int j = 0; j < fine.ny; ++j)
      for (int k = 0; k < fine.nz; ++k)
        out.col(fine.index(i, j, k)) = x.value().col(coarse.index(i / 2, j / 2, k / 2));
  auto nx = x.node();
  return detail::record<S>(std::move(out), {&x}, [nx, coarse, fine](const Mat<S>& g) {
    Mat<S> dx = Mat<S>::Zero(g.rows(), coarse.size());
    for (int i = 0; i < fine.nx; ++i)
      for (int j = 0; j < fine.ny; ++j)
        for (int k = 0; k < fine.nz; ++k)
          dx.col(coarse.index(i / 2, j / 2, k / 2)) += g.col(fine.index(i, j, k));
    nx->accumulate(dx);
  });
}

/// Group normalisation over (channels of the group) x (all voxels), followed by
/// a per-channel affine map. gamma, beta: C x 1.
template <class S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, int groups, S eps = S(1e-5))
{
  const Eigen::Index c = x.rows();
  if (groups < 1 || c % groups)
    throw InvalidArgument("group_norm: channel count not divisible by groups");
  const Eigen::Index cg = c / groups;
  const auto count = static_cast<S>(cg * x.cols());
  Mat<S> xhat(c, x.cols());
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    const auto blk = x.value().middleRows(gi * cg, cg);
    const S mean = blk.sum() / count;
    const S var = (blk.array() - mean).square().sum() / count;
    inv_std[gi] = S(1) / std::sqrt(var + eps);
    xhat.middleRows(gi * cg, cg) = ((blk.array() - mean) * inv_std[gi]).matrix();
  }
  Mat<S> out = (xhat.array().colwise() * gamma.value().col(0).array()).matrix();
  out.colwise() += beta.value().col(0);
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return detail::record<S>(
      std::move(out), {&x, &gamma, &beta}, [nx, ng, nb, xhat, inv_std, groups, cg, count](const Mat<S>& g) {
        if (ng->requires_grad)
          ng->accumulate(g.cwiseProduct(xhat).rowwise().sum());
        if (nb->requires_grad)
          nb->accumulate(g.rowwise().sum());
        if (nx->requires_grad) {
          const Mat<S> dxhat = (g.array().colwise() * ng->value.col(0).array()).matrix();
          Mat<S> dx(dxhat.rows(), dxhat.cols());
          for (int gi = 0; gi < groups; ++gi) {
            const auto d = dxhat.middleRows(gi * cg, cg).array();
            const auto xh = xhat.middleRows(gi * cg, cg).array();
            const S mean_d = d.sum() / count;
            const S mean_dx = (d * xh).sum() / count;
            dx.middleRows(gi * cg, cg) = (inv_std[gi] * (d - mean_d - xh * mean_dx)).matrix();
          }
          nx->accumulate(dx);
        }
      });
}

/// 0.01 mean|pred - target| + 0.99 mean(mask * |pred - target|) with `target`
/// and `mask` treated as constants. Returns a 1 x 1 variable.
template <class S>
Var<S> masked_weighted_l1(const Var<S>& pred, const Mat<S>& target, const Mat<S>& mask)
{
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || mask.rows() != pred.rows() ||
      mask.cols() != pred.cols())
    throw InvalidArgument("masked_weighted_l1: shape mismatch");
  const Mat<S> diff = pred.value() - target;
  const Mat<S> w = (S(0.01) + S(0.99) * mask.array()).matrix();
  const S n = static_cast<S>(pred.value().size());
  Mat<S> out(1, 1);
  out(0, 0) = diff.cwiseAbs().cwiseProduct(w).sum() / n;
  auto np = pred.node();
  return detail::record<S>(std::move(out), {&pred}, [np, diff, w, n](const Mat<S>& g) {
    np->accumulate((g(0, 0) / n) * diff.array().sign().matrix().cwiseProduct(w));
  });
}

} // namespace fodiff::nn
