// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used only by tests. Nothing here
// calls the library routine it is meant to check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "livmap/model.hpp"
#include "livmap/splits.hpp"

namespace livmap::oracle {

/// Loop-based loss of the fusion head in train mode (batch statistics),
/// plus the sign pattern of every hidden pre-activation.
struct NaiveEval {
  double loss = 0.0;
  std::vector<char> active;  // B x H
};

inline NaiveEval naive_loss(const Batch& batch, const FusionHeadParams& p, double bn_eps = 1e-5) {
  const std::size_t b = static_cast<std::size_t>(batch.aerial.rows());
  const std::size_t d = p.dim();
  const std::size_t h = kHiddenUnits;
  std::vector<std::vector<double>> m(b, std::vector<double>(d));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < d; ++r) {
      double acc = p.adapter_b(static_cast<Eigen::Index>(r));
      for (std::size_t c = 0; c < d; ++c) {
        acc += p.adapter_W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) *
               batch.aerial(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      }
      m[i][r] = acc + batch.ground(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r));
    }
  }
  for (std::size_t r = 0; r < d; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) mean += m[i][r];
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (std::size_t i = 0; i < b; ++i) var += (m[i][r] - mean) * (m[i][r] - mean);
    var /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      m[i][r] = p.bn_gamma(static_cast<Eigen::Index>(r)) * (m[i][r] - mean) / std::sqrt(var + bn_eps) +
                p.bn_beta(static_cast<Eigen::Index>(r));
    }
  }
  NaiveEval out;
  out.active.resize(b * h);
  for (std::size_t i = 0; i < b; ++i) {
    double s = p.b2;
    for (std::size_t k = 0; k < h; ++k) {
      double z = p.b1(static_cast<Eigen::Index>(k));
      for (std::size_t r = 0; r < d; ++r) {
        z += p.W1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) * m[i][r];
      }
      out.active[i * h + k] = z > 0.0;
      s += p.W2(static_cast<Eigen::Index>(k)) * std::max(z, 0.0);
    }
    const double e = batch.target(static_cast<Eigen::Index>(i)) - s;
    out.loss += e * e;
  }
  out.loss /= static_cast<double>(b);
  return out;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // entries whose stencil crossed a ReLU kink
};

/// Relative error with an absolute floor, so entries that are zero
/// analytically are judged on absolute error.
inline double rel_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences over every trainable entry, compared with the
/// given analytic gradients. Entries whose +-step flips any hidden unit are
/// non-differentiable there and are skipped (and counted). With
/// `extrapolate`, steps h and h/2 are combined by Richardson extrapolation,
/// which removes the O(h^2) truncation term.
inline GradCheck check_gradients(const Batch& batch, const FusionHeadParams& params,
                                 FusionHeadGrads analytic, double step = 1e-4,
                                 bool extrapolate = false) {
  GradCheck out;
  auto p = params;
  const auto base = naive_loss(batch, p);
  std::vector<std::span<double>> grads;
  for_each_tensor(analytic, [&](const TensorView& v) { grads.push_back(v.data); });
  std::size_t idx = 0;
  for_each_tensor(p, [&](const TensorView& v) {
    const auto g = grads[idx++];
    if (v.kind == TensorKind::RunningStat) return;
    for (std::size_t k = 0; k < v.data.size(); ++k) {
      const double orig = v.data[k];
      bool kink = false;
      auto central = [&](double h) {
        v.data[k] = orig + h;
        const auto up = naive_loss(batch, p);
        v.data[k] = orig - h;
        const auto down = naive_loss(batch, p);
        v.data[k] = orig;
        kink = kink || up.active != base.active || down.active != base.active;
        return (up.loss - down.loss) / (2.0 * h);
      };
      const double coarse = central(step);
      const double numeric = extrapolate ? (4.0 * central(0.5 * step) - coarse) / 3.0 : coarse;
      if (kink) {
        ++out.skipped_kinks;
        continue;
      }
      out.max_rel_error = std::max(out.max_rel_error, rel_error(g[k], numeric));
      ++out.checked;
    }
  });
  return out;
}

/// Random head with non-trivial batch-norm affine and adapter.
inline FusionHeadParams random_params(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  auto p = init_params(dim, rng());
  for (Eigen::Index i = 0; i < p.bn_gamma.size(); ++i) {
    p.bn_gamma(i) = 1.0 + 0.3 * n01(rng);
    p.bn_beta(i) = 0.3 * n01(rng);
    p.adapter_b(i) = 0.2 * n01(rng);
  }
  for (Eigen::Index i = 0; i < p.adapter_W.size(); ++i) p.adapter_W.data()[i] += 0.1 * n01(rng);
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = 0.1 * n01(rng);
  p.b2 = n01(rng);
  return p;
}

inline Batch random_batch(std::size_t b, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  const auto bb = static_cast<Eigen::Index>(b);
  const auto dd = static_cast<Eigen::Index>(dim);
  Batch batch{Matrix(bb, dd), Matrix(bb, dd), Vector(bb)};
  for (Eigen::Index i = 0; i < batch.aerial.size(); ++i) {
    batch.aerial.data()[i] = n01(rng);
    batch.ground.data()[i] = n01(rng);
  }
  for (Eigen::Index i = 0; i < bb; ++i) batch.target(i) = n01(rng);
  return batch;
}

/// Kendall pair statistics by enumerating all pairs.
struct PairCounts {
  std::int64_t pairs = 0, concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
};

inline PairCounts enumerate_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  PairCounts c;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      ++c.pairs;
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) ++c.ties_x;
      if (dy == 0.0) ++c.ties_y;
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0)) {
        ++c.concordant;
      } else {
        ++c.discordant;
      }
    }
  }
  return c;
}

inline double tau_a_by_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  const auto c = enumerate_pairs(x, y);
  return static_cast<double>(c.concordant - c.discordant) / static_cast<double>(c.pairs);
}

inline double tau_b_by_pairs(const std::vector<double>& x, const std::vector<double>& y) {
  const auto c = enumerate_pairs(x, y);
  return static_cast<double>(c.concordant - c.discordant) /
         std::sqrt(static_cast<double>(c.pairs - c.ties_x) * static_cast<double>(c.pairs - c.ties_y));
}

/// Label of one cell by brute force over every square.
inline Split label_by_enumeration(const CellId& c, const std::vector<SquareSpec>& squares,
                                  std::int32_t buffer) {
  bool near = false;
  for (const auto& sq : squares) {
    for (std::int32_t x = sq.origin.cx; x < sq.origin.cx + sq.side; ++x) {
      for (std::int32_t y = sq.origin.cy; y < sq.origin.cy + sq.side; ++y) {
        const auto d = chebyshev(c, {x, y});
        if (d == 0) return Split::Test;
        if (d <= buffer) near = true;
      }
    }
  }
  return near ? Split::Val : Split::Train;
}

}  // namespace livmap::oracle
