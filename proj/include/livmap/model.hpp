// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "livmap/error.hpp"

namespace livmap {

inline constexpr std::size_t kHiddenUnits = 100;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Trainable state of the regression head:
///
///   m  = adapter_W a + adapter_b + g         (aerial adapter, then fusion)
///   h0 = bn_gamma * (m - mean) / sqrt(var + eps) + bn_beta
///   h1 = relu(W1 h0 + b1)
///   s  = W2 h1 + b2
///
/// The same struct holds gradients; their running-stat fields stay zero.
struct FusionHeadParams {
  Vector bn_gamma, bn_beta;
  Vector bn_running_mean, bn_running_var;
  Matrix W1;  // kHiddenUnits x D
  Vector b1;  // kHiddenUnits
  Vector W2;  // 1 x kHiddenUnits, stored as a column
  double b2 = 0.0;
  Matrix adapter_W;  // D x D
  Vector adapter_b;  // D

  std::size_t dim() const { return static_cast<std::size_t>(bn_gamma.size()); }

  /// All-zero tensors shaped for `dim`.
  static FusionHeadParams zeros(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    const auto h = static_cast<Eigen::Index>(kHiddenUnits);
    FusionHeadParams p;
    p.bn_gamma = Vector::Zero(d);
    p.bn_beta = Vector::Zero(d);
    p.bn_running_mean = Vector::Zero(d);
    p.bn_running_var = Vector::Zero(d);
    p.W1 = Matrix::Zero(h, d);
    p.b1 = Vector::Zero(h);
    p.W2 = Vector::Zero(h);
    p.adapter_W = Matrix::Zero(d, d);
    p.adapter_b = Vector::Zero(d);
    return p;
  }

  friend bool operator==(const FusionHeadParams& a, const FusionHeadParams& b) {
    return a.bn_gamma == b.bn_gamma && a.bn_beta == b.bn_beta &&
           a.bn_running_mean == b.bn_running_mean && a.bn_running_var == b.bn_running_var &&
           a.W1 == b.W1 && a.b1 == b.b1 && a.W2 == b.W2 && a.b2 == b.b2 &&
           a.adapter_W == b.adapter_W && a.adapter_b == b.adapter_b;
  }
};

using FusionHeadGrads = FusionHeadParams;

/// How a tensor is treated by the optimizer.
enum class TensorKind : std::uint8_t { Weight, Bias, Affine, RunningStat };

/// Tensors in checkpoint order.
enum class Tensor : std::uint8_t {
  BnGamma, BnBeta, BnRunningMean, BnRunningVar, W1, B1, W2, B2, AdapterW, AdapterB
};
inline constexpr std::size_t kTensorCount = 10;

struct TensorView {
  Tensor id;
  const char* name;
  TensorKind kind;
  std::span<double> data;
};

/// Visits every tensor of `p` in checkpoint order.
template <typename Fn>
void for_each_tensor(FusionHeadParams& p, Fn&& fn) {
  auto span_of = [](auto& t) { return std::span<double>(t.data(), static_cast<std::size_t>(t.size())); };
  fn(TensorView{Tensor::BnGamma, "bn_gamma", TensorKind::Affine, span_of(p.bn_gamma)});
  fn(TensorView{Tensor::BnBeta, "bn_beta", TensorKind::Affine, span_of(p.bn_beta)});
  fn(TensorView{Tensor::BnRunningMean, "bn_running_mean", TensorKind::RunningStat,
                span_of(p.bn_running_mean)});
  fn(TensorView{Tensor::BnRunningVar, "bn_running_var", TensorKind::RunningStat,
                span_of(p.bn_running_var)});
  fn(TensorView{Tensor::W1, "W1", TensorKind::Weight, span_of(p.W1)});
  fn(TensorView{Tensor::B1, "b1", TensorKind::Bias, span_of(p.b1)});
  fn(TensorView{Tensor::W2, "W2", TensorKind::Weight, span_of(p.W2)});
  fn(TensorView{Tensor::B2, "b2", TensorKind::Bias, std::span<double>(&p.b2, 1)});
  fn(TensorView{Tensor::AdapterW, "adapter_W", TensorKind::Weight, span_of(p.adapter_W)});
  fn(TensorView{Tensor::AdapterB, "adapter_b", TensorKind::Bias, span_of(p.adapter_b)});
}

inline bool is_adapter(Tensor t) { return t == Tensor::AdapterW || t == Tensor::AdapterB; }

/// Kaiming-uniform weights from a seeded generator, unit batch-norm,
/// identity adapter, zero biases.
inline FusionHeadParams init_params(std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw ValidationError("feature dim must be >= 1");
  auto p = FusionHeadParams::zeros(dim);
  p.bn_gamma.setOnes();
  p.bn_running_var.setOnes();
  p.adapter_W.setIdentity();

  std::mt19937_64 rng(seed);
  // Uniform in [-bound, bound) from the top 53 bits; avoids the
  // implementation-defined std::uniform_real_distribution.
  auto uniform = [&rng](double bound) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return (2.0 * u - 1.0) * bound;
  };
  const double bound1 = std::sqrt(6.0 / static_cast<double>(dim));
  for (Eigen::Index i = 0; i < p.W1.size(); ++i) p.W1.data()[i] = uniform(bound1);
  const double bound2 = std::sqrt(6.0 / static_cast<double>(kHiddenUnits));
  for (Eigen::Index i = 0; i < p.W2.size(); ++i) p.W2.data()[i] = uniform(bound2);
  return p;
}

/// Rows are samples.
struct Batch {
  Matrix aerial;  // B x D
  Matrix ground;  // B x D, pooled ground features
  Vector target;  // B
};

struct HeadOptions {
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// Intermediates kept by a train-mode forward pass for backward().
struct ForwardCache {
  bool valid = false;
  Matrix aerial;  // adapter input
  Matrix xhat;    // normalized merged features
  Vector inv_std;
  Matrix h0;
  Matrix z1;  // pre-activation of the hidden layer
  Matrix h1;
  Vector prediction;
};

namespace detail {

inline void check_batch(const Batch& batch, std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  if (batch.aerial.cols() != d || batch.ground.cols() != d) {
    throw ValidationError("batch feature dim " + std::to_string(batch.aerial.cols()) +
                          " does not match model dim " + std::to_string(dim));
  }
  if (batch.aerial.rows() != batch.ground.rows()) {
    throw ValidationError("aerial and ground batch sizes differ");
  }
  if (!batch.aerial.allFinite() || !batch.ground.allFinite()) {
    throw ValidationError("non-finite input features");
  }
}

inline Matrix merged(const Batch& batch, const FusionHeadParams& p) {
  Matrix m = batch.aerial * p.adapter_W.transpose() + batch.ground;
  m.rowwise() += p.adapter_b.transpose();
  return m;
}

inline Vector head(const Matrix& h0, const FusionHeadParams& p, Matrix* z1_out, Matrix* h1_out) {
  Matrix z1 = h0 * p.W1.transpose();
  z1.rowwise() += p.b1.transpose();
  Matrix h1 = z1.cwiseMax(0.0);
  Vector s = h1 * p.W2;
  s.array() += p.b2;
  if (z1_out) *z1_out = std::move(z1);
  if (h1_out) *h1_out = std::move(h1);
  return s;
}

}  // namespace detail

/// Eval-mode prediction: batch-norm uses the running statistics.
inline Vector forward_eval(const Batch& batch, const FusionHeadParams& p,
                           const HeadOptions& opt = {}) {
  detail::check_batch(batch, p.dim());
  if (batch.aerial.rows() < 1) throw ValidationError("forward: empty batch");
  Matrix m = detail::merged(batch, p);
  const Vector scale = (p.bn_running_var.array() + opt.bn_eps).rsqrt().matrix().cwiseProduct(p.bn_gamma);
  m.rowwise() -= p.bn_running_mean.transpose();
  m = m * scale.asDiagonal();
  m.rowwise() += p.bn_beta.transpose();
  return detail::head(m, p, nullptr, nullptr);
}

/// Train-mode forward: batch statistics, running stats updated with
/// momentum (running variance uses the unbiased batch estimate).
inline Vector forward_train(const Batch& batch, FusionHeadParams& p, ForwardCache& cache,
                            const HeadOptions& opt = {}) {
  detail::check_batch(batch, p.dim());
  const Eigen::Index b = batch.aerial.rows();
  if (b < 2) throw ValidationError("train-mode forward needs a batch of at least 2");

  Matrix m = detail::merged(batch, p);
  const Vector mean = m.colwise().mean().transpose();
  m.rowwise() -= mean.transpose();
  const Vector var = m.array().square().colwise().sum().transpose() / static_cast<double>(b);
  cache.inv_std = (var.array() + opt.bn_eps).rsqrt().matrix();
  cache.xhat = m * cache.inv_std.asDiagonal();
  cache.h0 = cache.xhat * p.bn_gamma.asDiagonal();
  cache.h0.rowwise() += p.bn_beta.transpose();

  cache.prediction = detail::head(cache.h0, p, &cache.z1, &cache.h1);
  cache.aerial = batch.aerial;
  cache.valid = true;

  const double mom = opt.bn_momentum;
  const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
  p.bn_running_mean = (1.0 - mom) * p.bn_running_mean + mom * mean;
  p.bn_running_var = (1.0 - mom) * p.bn_running_var + (mom * unbias) * var;
  return cache.prediction;
}

/// Mean squared error over the batch.
inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ValidationError("mse_loss: length mismatch");
  if (pred.empty()) throw ValidationError("mse_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = target[i] - pred[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

inline double mse_loss(const Vector& pred, const Vector& target) {
  return mse_loss(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                  std::span<const double>(target.data(), static_cast<std::size_t>(target.size())));
}

/// Exact gradients of mse_loss through the whole head, including the
/// batch-statistics terms of batch-norm. Consumes the cache.
inline FusionHeadGrads backward(ForwardCache& cache, const FusionHeadParams& p,
                                const Vector& target) {
  if (!cache.valid) throw ValidationError("backward: missing or stale forward cache");
  const Eigen::Index b = cache.prediction.size();
  if (target.size() != b) throw ValidationError("backward: target length does not match batch");
  cache.valid = false;

  auto g = FusionHeadGrads::zeros(p.dim());
  const Vector ds = (2.0 / static_cast<double>(b)) * (cache.prediction - target);

  g.W2 = cache.h1.transpose() * ds;
  g.b2 = ds.sum();
  Matrix dz1 = ds * p.W2.transpose();
  dz1.array() *= (cache.z1.array() > 0.0).cast<double>();
  g.W1 = dz1.transpose() * cache.h0;
  g.b1 = dz1.colwise().sum().transpose();
  const Matrix dh0 = dz1 * p.W1;

  g.bn_gamma = dh0.cwiseProduct(cache.xhat).colwise().sum().transpose();
  g.bn_beta = dh0.colwise().sum().transpose();
  const Matrix dxhat = dh0 * p.bn_gamma.asDiagonal();
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
  Matrix dm = static_cast<double>(b) * dxhat;
  dm.rowwise() -= sum_dxhat;
  dm -= cache.xhat * sum_dxhat_xhat.asDiagonal();
  dm = dm * (cache.inv_std / static_cast<double>(b)).asDiagonal();

  g.adapter_W = dm.transpose() * cache.aerial;
  g.adapter_b = dm.colwise().sum().transpose();
  return g;
}

struct TrainConfig {
  std::size_t epochs = 25;
  double lr = 0.001;
  double weight_decay = 0.001;
  std::size_t batch_size = 64;
  std::size_t freeze_adapter_epochs = 3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  bool decoupled_weight_decay = false;

  HeadOptions head() const { return {bn_eps, bn_momentum}; }

  void check() const {
    if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (freeze_adapter_epochs > epochs) {
      throw ValidationError("freeze_adapter_epochs must not exceed epochs");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0 && bn_eps > 0.0 && bn_momentum > 0.0 && bn_momentum <= 1.0)) {
      throw ValidationError("eps and momentum must be positive");
    }
  }
};

/// First and second moments per tensor plus per-tensor step counts, so a
/// tensor that joins training late starts with its own bias correction.
struct AdamState {
  FusionHeadParams m;
  FusionHeadParams v;
  std::array<std::uint64_t, kTensorCount> steps{};
  std::uint64_t t = 0;

  static AdamState zeros(std::size_t dim) {
    return {FusionHeadParams::zeros(dim), FusionHeadParams::zeros(dim), {}, 0};
  }
};

/// One Adam update of every trainable tensor. Weight decay touches weight
/// matrices only: coupled L2 (g += wd * theta) by default, AdamW-style
/// when `decoupled_weight_decay` is set. Tensors for which `skip` returns
/// true keep their values and moments.
template <typename SkipFn>
void adam_step(FusionHeadParams& params, FusionHeadGrads grads, AdamState& state,
               const TrainConfig& cfg, SkipFn&& skip) {
  std::vector<std::span<double>> gspans;
  for_each_tensor(grads, [&](const TensorView& v) { gspans.push_back(v.data); });
  for (const auto& s : gspans) {
    for (double x : s) {
      if (!std::isfinite(x)) throw RuntimeError("non-finite gradient");
    }
  }
  std::vector<std::span<double>> mspans, vspans;
  for_each_tensor(state.m, [&](const TensorView& v) { mspans.push_back(v.data); });
  for_each_tensor(state.v, [&](const TensorView& v) { vspans.push_back(v.data); });

  ++state.t;
  std::size_t idx = 0;
  for_each_tensor(params, [&](const TensorView& view) {
    const std::size_t i = idx++;
    if (view.kind == TensorKind::RunningStat || skip(view.id)) return;
    const auto step = ++state.steps[i];
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const bool decay = view.kind == TensorKind::Weight && cfg.weight_decay > 0.0;
    auto theta = view.data;
    auto g = gspans[i];
    auto m = mspans[i];
    auto v = vspans[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      double gk = g[k];
      if (decay && !cfg.decoupled_weight_decay) gk += cfg.weight_decay * theta[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      if (decay && cfg.decoupled_weight_decay) theta[k] -= cfg.lr * cfg.weight_decay * theta[k];
      theta[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  });
}

inline void adam_step(FusionHeadParams& params, const FusionHeadGrads& grads, AdamState& state,
                      const TrainConfig& cfg) {
  adam_step(params, grads, state, cfg, [](Tensor) { return false; });
}

}  // namespace livmap
