// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/features.hpp"
#include "livmap/metrics.hpp"
#include "livmap/model.hpp"
#include "livmap/parallel.hpp"

namespace livmap {

/// Stacks the selected bundles into a batch.
inline Batch make_batch(const std::vector<PatchBundle>& bundles,
                        std::span<const std::size_t> rows, std::size_t dim) {
  const auto b = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(dim);
  Batch batch{Matrix(b, d), Matrix(b, d), Vector(b)};
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& pb = bundles[rows[static_cast<std::size_t>(i)]];
    if (pb.aerial.dim() != dim || pb.pooled_ground.dim() != dim) {
      throw ValidationError("bundle " + to_string(pb.cell) + " has dim " +
                            std::to_string(pb.aerial.dim()) + ", model expects " +
                            std::to_string(dim));
    }
    batch.aerial.row(i) = Eigen::Map<const Eigen::RowVectorXd>(pb.aerial.values.data(), d);
    batch.ground.row(i) = Eigen::Map<const Eigen::RowVectorXd>(pb.pooled_ground.values.data(), d);
    batch.target(i) = pb.target;
  }
  return batch;
}

inline Batch make_batch(const std::vector<PatchBundle>& bundles, std::size_t dim) {
  std::vector<std::size_t> rows(bundles.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(bundles, rows, dim);
}

inline constexpr std::size_t kPredictChunk = 256;

/// Eval-mode predictions, one per bundle in input order. Work is split into
/// fixed-size chunks so results do not depend on the thread count.
inline std::vector<double> predict(const FusionHeadParams& params,
                                   const std::vector<PatchBundle>& bundles,
                                   const HeadOptions& opt = {}) {
  std::vector<double> out(bundles.size());
  const std::size_t chunks = (bundles.size() + kPredictChunk - 1) / kPredictChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * kPredictChunk;
    const std::size_t hi = std::min(bundles.size(), lo + kPredictChunk);
    std::vector<std::size_t> rows(hi - lo);
    std::iota(rows.begin(), rows.end(), lo);
    const Vector s = forward_eval(make_batch(bundles, rows, params.dim()), params, opt);
    for (std::size_t i = lo; i < hi; ++i) out[i] = s(static_cast<Eigen::Index>(i - lo));
  });
  return out;
}

inline std::vector<double> targets_of(const std::vector<PatchBundle>& bundles) {
  std::vector<double> t;
  t.reserve(bundles.size());
  for (const auto& b : bundles) t.push_back(b.target);
  return t;
}

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_rmse;
  std::vector<double> val_tau;  // NaN where tau is undefined

  std::size_t size() const { return train_loss.size(); }
};

struct TrainResult {
  FusionHeadParams params;
  TrainHistory history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
};

/// Called after every epoch with the 1-based epoch index and the current
/// (not the best) parameters.
using EpochCallback = std::function<void(std::size_t, const FusionHeadParams&)>;

namespace detail {

// Fisher-Yates with rejection sampling, independent of the standard
// library's distribution implementations.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r % bound)]);
  }
}

// Contiguous batches of `size`; a trailing single sample joins the previous
// batch because train-mode batch-norm needs at least two.
inline std::vector<std::span<const std::size_t>> make_batches(const std::vector<std::size_t>& idx,
                                                               std::size_t size) {
  std::vector<std::span<const std::size_t>> out;
  std::size_t lo = 0;
  while (lo < idx.size()) {
    std::size_t hi = std::min(idx.size(), lo + size);
    if (idx.size() - hi == 1) hi = idx.size();
    out.emplace_back(idx.data() + lo, hi - lo);
    lo = hi;
  }
  return out;
}

}  // namespace detail

/// Minibatch Adam on the mean squared error. During the first
/// `freeze_adapter_epochs` epochs only the batch-norm affine and the two
/// fully-connected layers learn; the aerial adapter joins afterwards. The
/// pooled ground features are constants throughout. Returns the parameters
/// of the epoch with the lowest validation RMSE (earliest on ties).
inline TrainResult train_model(const Dataset& ds, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {},
                               TauVariant tau_variant = TauVariant::TauB) {
  cfg.check();
  const auto& train = ds[Split::Train];
  const auto& val = ds[Split::Val];
  if (train.size() < 2) {
    throw ValidationError("training split needs at least 2 cells, has " +
                          std::to_string(train.size()));
  }
  if (val.empty()) throw ValidationError("validation split is empty");

  TrainResult result;
  auto params = init_params(ds.dim, cfg.seed);
  result.params = params;
  if (cfg.epochs == 0) return result;

  auto state = AdamState::zeros(ds.dim);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto val_targets = targets_of(val);
  const HeadOptions head = cfg.head();

  double best_rmse = std::numeric_limits<double>::infinity();
  ForwardCache cache;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool adapter_frozen = epoch <= cfg.freeze_adapter_epochs;
    detail::shuffle_indices(order, rng);
    double loss_sum = 0.0;
    for (const auto rows : detail::make_batches(order, cfg.batch_size)) {
      const Batch batch = make_batch(train, rows, ds.dim);
      const Vector pred = forward_train(batch, params, cache, head);
      const double loss = mse_loss(pred, batch.target);
      if (!std::isfinite(loss)) {
        throw RuntimeError("training diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(rows.size());
      FusionHeadGrads grads = backward(cache, params, batch.target);
      if (adapter_frozen) {
        grads.adapter_W.setZero();
        grads.adapter_b.setZero();
      }
      try {
        adam_step(params, grads, state, cfg,
                  [&](Tensor t) { return adapter_frozen && is_adapter(t); });
      } catch (const RuntimeError&) {
        throw RuntimeError("training diverged at epoch " + std::to_string(epoch));
      }
    }
    const double train_loss = loss_sum / static_cast<double>(train.size());

    const auto val_pred = predict(params, val, head);
    const double vr = rmse(val_pred, val_targets);
    if (!std::isfinite(vr)) {
      throw RuntimeError("training diverged at epoch " + std::to_string(epoch));
    }
    double vt = std::numeric_limits<double>::quiet_NaN();
    if (val.size() >= 2) {
      try {
        vt = kendall_tau(val_pred, val_targets, tau_variant);
      } catch (const ValidationError&) {
        // constant predictions leave tau_b undefined
      }
    }
    result.history.train_loss.push_back(train_loss);
    result.history.val_rmse.push_back(vr);
    result.history.val_tau.push_back(vt);
    if (vr < best_rmse) {
      best_rmse = vr;
      result.best_epoch = epoch;
      result.params = params;
    }
    if (on_epoch) on_epoch(epoch, params);
  }
  return result;
}

inline std::string format_history(const TrainHistory& h) {
  std::string text = "epoch,train_loss,val_rmse,val_tau\n";
  for (std::size_t e = 0; e < h.size(); ++e) {
    text += std::to_string(e + 1) + "," + csv::format_real(h.train_loss[e]) + "," +
            csv::format_real(h.val_rmse[e]) + "," +
            (std::isnan(h.val_tau[e]) ? std::string("nan") : csv::format_real(h.val_tau[e])) +
            "\n";
  }
  return text;
}

// ---------------------------------------------------------------------------
// Checkpoint: "LVM1", u32 dim, then every tensor of FusionHeadParams in
// for_each_tensor order as little-endian float64:
//   bn_gamma[D] bn_beta[D] bn_running_mean[D] bn_running_var[D]
//   W1[100 x D, row-major] b1[100] W2[100] b2[1] adapter_W[D x D, row-major]
//   adapter_b[D]

inline constexpr char kCheckpointMagic[4] = {'L', 'V', 'M', '1'};

inline std::size_t checkpoint_size(std::size_t dim) {
  return 8 + 8 * (4 * dim + kHiddenUnits * dim + 2 * kHiddenUnits + 1 + dim * dim + dim);
}

inline std::string encode_checkpoint(const FusionHeadParams& params) {
  auto p = params;
  std::string out(kCheckpointMagic, 4);
  detail::append_le(out, p.dim(), 4);
  for_each_tensor(p, [&](const TensorView& v) {
    for (double x : v.data) detail::append_le(out, std::bit_cast<std::uint64_t>(x), 8);
  });
  return out;
}

inline FusionHeadParams decode_checkpoint(const std::string& bytes,
                                          const std::string& path = "<memory>") {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ValidationError(path + ": not an LVM1 checkpoint");
  }
  std::size_t pos = 4;
  const auto dim = static_cast<std::size_t>(detail::read_le(bytes, pos, 4, path));
  if (dim == 0 || bytes.size() != checkpoint_size(dim)) {
    throw ValidationError(path + ": checkpoint size does not match its header");
  }
  auto p = FusionHeadParams::zeros(dim);
  for_each_tensor(p, [&](const TensorView& v) {
    for (double& x : v.data) {
      x = std::bit_cast<double>(detail::read_le(bytes, pos, 8, path));
      if (!std::isfinite(x)) throw ValidationError(path + ": non-finite parameter");
    }
  });
  if ((p.bn_running_var.array() <= 0.0).any()) {
    throw ValidationError(path + ": running variance must be positive");
  }
  return p;
}

inline void save_checkpoint(const FusionHeadParams& p, const std::filesystem::path& path) {
  csv::write_text(path, encode_checkpoint(p));
}

inline FusionHeadParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(csv::read_text(path), path.string());
}

}  // namespace livmap
