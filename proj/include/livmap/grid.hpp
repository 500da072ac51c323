// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"

namespace livmap {

inline constexpr double kCellSizeM = 100.0;
inline constexpr double kPatchHalfWidthM = 250.0;

/// Index of one 100 m x 100 m grid cell in a projected metric frame.
/// Cell (cx, cy) covers [100 cx, 100 (cx+1)) x [100 cy, 100 (cy+1)).
struct CellId {
  std::int32_t cx = 0;
  std::int32_t cy = 0;

  friend constexpr auto operator<=>(const CellId&, const CellId&) = default;

  /// Packs the cell into the 64-bit key used by binary feature stores.
  constexpr std::uint64_t key() const {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
           static_cast<std::uint32_t>(cy);
  }
  static constexpr CellId from_key(std::uint64_t k) {
    return {static_cast<std::int32_t>(k >> 32), static_cast<std::int32_t>(k & 0xffffffffu)};
  }
};

inline std::string to_string(const CellId& c) {
  return "(" + std::to_string(c.cx) + "," + std::to_string(c.cy) + ")";
}

/// Chebyshev (square ring) distance between two cells.
inline std::int64_t chebyshev(const CellId& a, const CellId& b) {
  return std::max(std::abs(std::int64_t{a.cx} - b.cx), std::abs(std::int64_t{a.cy} - b.cy));
}

/// Inclusive index range of stored cells.
struct CellBounds {
  std::int32_t min_cx = 0, min_cy = 0, max_cx = -1, max_cy = -1;

  bool empty() const { return max_cx < min_cx || max_cy < min_cy; }
  bool contains(const CellId& c) const {
    return c.cx >= min_cx && c.cx <= max_cx && c.cy >= min_cy && c.cy <= max_cy;
  }
  std::int32_t width() const { return empty() ? 0 : max_cx - min_cx + 1; }
  std::int32_t height() const { return empty() ? 0 : max_cy - min_cy + 1; }
};

/// The 500 m aerial window around a cell center. Extents are half-open,
/// [center - half_width, center + half_width), like cell boundaries.
struct PatchGeometry {
  double center_x = 0.0;
  double center_y = 0.0;
  double half_width = kPatchHalfWidthM;

  double min_x() const { return center_x - half_width; }
  double max_x() const { return center_x + half_width; }
  double min_y() const { return center_y - half_width; }
  double max_y() const { return center_y + half_width; }
  bool contains(double x, double y) const {
    return x >= min_x() && x < max_x() && y >= min_y() && y < max_y();
  }
};

inline PatchGeometry patch_extent_of_cell(const CellId& cell,
                                          double half_width = kPatchHalfWidthM) {
  return {kCellSizeM * cell.cx + kCellSizeM / 2, kCellSizeM * cell.cy + kCellSizeM / 2,
          half_width};
}

/// Sparse cell grid holding one housing-quality score per cell. Immutable
/// once built; insert() is the only mutator and enforces the invariants.
class ScoreGrid {
 public:
  using Map = std::map<CellId, double>;

  void insert(const CellId& c, double score) {
    if (c.cx < 0 || c.cy < 0) {
      throw ValidationError("cell " + to_string(c) + " has a negative index");
    }
    if (!std::isfinite(score)) {
      throw ValidationError("cell " + to_string(c) + " has a non-finite score");
    }
    if (!cells_.emplace(c, score).second) {
      throw ValidationError("duplicate cell " + to_string(c));
    }
    if (cells_.size() == 1) {
      bounds_ = {c.cx, c.cy, c.cx, c.cy};
    } else {
      bounds_.min_cx = std::min(bounds_.min_cx, c.cx);
      bounds_.min_cy = std::min(bounds_.min_cy, c.cy);
      bounds_.max_cx = std::max(bounds_.max_cx, c.cx);
      bounds_.max_cy = std::max(bounds_.max_cy, c.cy);
    }
  }

  const Map& cells() const { return cells_; }
  const CellBounds& bounds() const { return bounds_; }
  std::size_t size() const { return cells_.size(); }
  bool contains(const CellId& c) const { return cells_.count(c) != 0; }
  double score(const CellId& c) const {
    auto it = cells_.find(c);
    if (it == cells_.end()) throw ValidationError("cell " + to_string(c) + " is not in the grid");
    return it->second;
  }
  double cell_size_m() const { return kCellSizeM; }

  friend bool operator==(const ScoreGrid& a, const ScoreGrid& b) { return a.cells_ == b.cells_; }

 private:
  Map cells_;
  CellBounds bounds_;
};

/// Reads scores.csv (`cell_x,cell_y,score`). Every error names the row.
inline ScoreGrid load_score_grid(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"cell_x", "cell_y", "score"});
  if (t.header.size() != 3) throw ValidationError(t.path + ": expected exactly 3 columns");
  ScoreGrid grid;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto cx = csv::parse_int(t, r, 0);
    const auto cy = csv::parse_int(t, r, 1);
    if (cx < 0 || cy < 0 || cx > std::numeric_limits<std::int32_t>::max() ||
        cy > std::numeric_limits<std::int32_t>::max()) {
      throw ValidationError(csv::where(t, r) + ": cell index out of range");
    }
    const auto score = csv::parse_real(t, r, 2);
    const CellId c{static_cast<std::int32_t>(cx), static_cast<std::int32_t>(cy)};
    if (grid.contains(c)) {
      throw ValidationError(csv::where(t, r) + ": duplicate cell " + to_string(c));
    }
    grid.insert(c, score);
  }
  return grid;
}

inline std::string format_score_grid(const ScoreGrid& grid) {
  std::string out = "cell_x,cell_y,score\n";
  for (const auto& [c, s] : grid.cells()) {
    out += std::to_string(c.cx) + "," + std::to_string(c.cy) + "," + csv::format_real(s) + "\n";
  }
  return out;
}

inline void save_score_grid(const ScoreGrid& grid, const std::filesystem::path& path) {
  csv::write_text(path, format_score_grid(grid));
}

/// Cell containing the point (x, y), in meters. Lower edges are inclusive.
inline CellId cell_of_point(const ScoreGrid& grid, double x, double y) {
  const auto& b = grid.bounds();
  if (!std::isfinite(x) || !std::isfinite(y) || x < 0.0 || y < 0.0 || b.empty()) {
    throw ValidationError("point outside grid bounds");
  }
  const double fx = std::floor(x / kCellSizeM);
  const double fy = std::floor(y / kCellSizeM);
  if (fx < b.min_cx || fx > b.max_cx || fy < b.min_cy || fy > b.max_cy) {
    throw ValidationError("point (" + csv::format_real(x) + "," + csv::format_real(y) +
                          ") outside grid bounds");
  }
  return {static_cast<std::int32_t>(fx), static_cast<std::int32_t>(fy)};
}

}  // namespace livmap
