// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "livmap/error.hpp"

namespace livmap {

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ValidationError("rmse: length mismatch");
  if (pred.empty()) throw ValidationError("rmse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = target[i] - pred[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pred.size()));
}

enum class TauVariant : std::uint8_t { TauA, TauB };

inline const char* to_string(TauVariant v) { return v == TauVariant::TauA ? "tau_a" : "tau_b"; }

inline TauVariant parse_tau_variant(const std::string& s) {
  if (s == "tau_a" || s == "a") return TauVariant::TauA;
  if (s == "tau_b" || s == "b") return TauVariant::TauB;
  throw ValidationError("unknown tau variant '" + s + "' (expected tau_a|tau_b)");
}

/// Exact pair statistics behind Kendall's tau.
struct KendallCounts {
  std::int64_t pairs = 0;           // n(n-1)/2
  std::int64_t score = 0;           // concordant - discordant
  std::int64_t ties_x = 0;          // pairs tied in x (including joint ties)
  std::int64_t ties_y = 0;          // pairs tied in y (including joint ties)
  std::int64_t ties_xy = 0;         // pairs tied in both
};

/// Final division shared by every route that produces KendallCounts, so
/// equal counts always give bit-identical coefficients.
inline double tau_from_counts(const KendallCounts& k, TauVariant variant) {
  if (variant == TauVariant::TauA) {
    return static_cast<double>(k.score) / static_cast<double>(k.pairs);
  }
  const double denom =
      std::sqrt(static_cast<double>(k.pairs - k.ties_x) * static_cast<double>(k.pairs - k.ties_y));
  if (!(denom > 0.0)) {
    throw ValidationError("tau_b undefined: one input is constant");
  }
  return static_cast<double>(k.score) / denom;
}

namespace detail {

inline std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Sorts v[lo, hi) and returns the number of inversions (strictly greater
// element before a smaller one).
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi), v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace detail

/// O(n log n) pair statistics (Knight's merge-sort algorithm).
inline KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("kendall_tau: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("kendall_tau: need at least 2 samples");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw ValidationError("kendall_tau: non-finite input");
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  KendallCounts k;
  k.pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;

  std::size_t run_x = 1, run_xy = 1;
  for (std::size_t i = 1; i < n; ++i) {
    const bool same_x = x[order[i]] == x[order[i - 1]];
    const bool same_y = y[order[i]] == y[order[i - 1]];
    if (same_x) {
      ++run_x;
      if (same_y) {
        ++run_xy;
      } else {
        k.ties_xy += detail::tied_pairs(static_cast<std::int64_t>(run_xy));
        run_xy = 1;
      }
    } else {
      k.ties_x += detail::tied_pairs(static_cast<std::int64_t>(run_x));
      k.ties_xy += detail::tied_pairs(static_cast<std::int64_t>(run_xy));
      run_x = run_xy = 1;
    }
  }
  k.ties_x += detail::tied_pairs(static_cast<std::int64_t>(run_x));
  k.ties_xy += detail::tied_pairs(static_cast<std::int64_t>(run_xy));

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t discordant = detail::merge_count(ys, buf, 0, n);

  std::size_t run_y = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (ys[i] == ys[i - 1]) {
      ++run_y;
    } else {
      k.ties_y += detail::tied_pairs(static_cast<std::int64_t>(run_y));
      run_y = 1;
    }
  }
  k.ties_y += detail::tied_pairs(static_cast<std::int64_t>(run_y));

  k.score = k.pairs - k.ties_x - k.ties_y + k.ties_xy - 2 * discordant;
  return k;
}

/// Kendall's rank correlation between predictions and targets.
inline double kendall_tau(std::span<const double> pred, std::span<const double> target,
                          TauVariant variant = TauVariant::TauB) {
  return tau_from_counts(kendall_counts(pred, target), variant);
}

}  // namespace livmap
