// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/grid.hpp"

namespace livmap {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split label '" + s + "'");
}

/// Axis-aligned square test region, `side` cells wide starting at `origin`.
struct SquareSpec {
  CellId origin;
  std::int32_t side = 1;

  std::int32_t last_cx() const { return origin.cx + side - 1; }
  std::int32_t last_cy() const { return origin.cy + side - 1; }
  bool contains(const CellId& c) const {
    return c.cx >= origin.cx && c.cx <= last_cx() && c.cy >= origin.cy && c.cy <= last_cy();
  }
  /// Chebyshev distance from a cell to the nearest cell of the square; 0 inside.
  std::int64_t distance(const CellId& c) const {
    const std::int64_t dx =
        std::max<std::int64_t>({0, std::int64_t{origin.cx} - c.cx, std::int64_t{c.cx} - last_cx()});
    const std::int64_t dy =
        std::max<std::int64_t>({0, std::int64_t{origin.cy} - c.cy, std::int64_t{c.cy} - last_cy()});
    return std::max(dx, dy);
  }
};

inline constexpr std::int32_t kDefaultBufferCells = 2;

struct SplitAssignment {
  std::map<CellId, Split> assignment;
  std::int32_t buffer_cells = kDefaultBufferCells;

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& [c, l] : assignment) n += (l == s);
    return n;
  }
};

/// Labels every grid cell: inside a square is TEST, within `buffer_cells`
/// (Chebyshev) of a square is VAL, everything else is TRAIN.
inline SplitAssignment generate_splits(const ScoreGrid& grid, const std::vector<SquareSpec>& squares,
                                       std::int32_t buffer_cells = kDefaultBufferCells) {
  if (buffer_cells < 0) throw ValidationError("buffer_cells must be >= 0");
  const auto& b = grid.bounds();
  for (std::size_t i = 0; i < squares.size(); ++i) {
    const auto& sq = squares[i];
    if (sq.side < 1) throw ValidationError("square " + std::to_string(i) + ": side must be >= 1");
    if (b.empty() || sq.origin.cx < b.min_cx || sq.origin.cy < b.min_cy ||
        sq.last_cx() > b.max_cx || sq.last_cy() > b.max_cy) {
      throw ValidationError("square " + std::to_string(i) + " at " + to_string(sq.origin) +
                            " side " + std::to_string(sq.side) + " is outside the grid bounds");
    }
  }
  for (std::size_t i = 0; i < squares.size(); ++i) {
    for (std::size_t j = i + 1; j < squares.size(); ++j) {
      const auto& p = squares[i];
      const auto& q = squares[j];
      const std::int64_t reach = 2 * std::int64_t{buffer_cells};
      const bool apart_x = std::int64_t{q.origin.cx} - p.last_cx() > reach ||
                           std::int64_t{p.origin.cx} - q.last_cx() > reach;
      const bool apart_y = std::int64_t{q.origin.cy} - p.last_cy() > reach ||
                           std::int64_t{p.origin.cy} - q.last_cy() > reach;
      if (!apart_x && !apart_y) {
        throw ValidationError("squares " + std::to_string(i) + " and " + std::to_string(j) +
                              " overlap after buffer expansion by " +
                              std::to_string(buffer_cells) + " cells");
      }
    }
  }

  SplitAssignment out;
  out.buffer_cells = buffer_cells;
  for (const auto& [c, score] : grid.cells()) {
    Split label = Split::Train;
    for (const auto& sq : squares) {
      const auto d = sq.distance(c);
      if (d == 0) {
        label = Split::Test;
        break;
      }
      if (d <= buffer_cells) label = Split::Val;
    }
    out.assignment.emplace_hint(out.assignment.end(), c, label);
  }
  return out;
}

struct SplitViolation {
  CellId test;
  CellId train;
};

struct SplitValidation {
  std::vector<SplitViolation> violations;
  std::vector<CellId> unlabeled;  // grid cells missing from the assignment
  std::vector<CellId> extra;      // labeled cells absent from the grid

  bool ok() const { return violations.empty() && unlabeled.empty() && extra.empty(); }
};

/// Lists every (TEST, TRAIN) pair closer than or equal to the buffer width.
inline SplitValidation validate_splits(const SplitAssignment& a) {
  SplitValidation v;
  const std::int32_t r = a.buffer_cells;
  for (const auto& [c, label] : a.assignment) {
    if (label != Split::Test) continue;
    for (std::int64_t dx = -r; dx <= r; ++dx) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        const std::int64_t nx = c.cx + dx;
        const std::int64_t ny = c.cy + dy;
        if (nx < 0 || ny < 0 || nx > INT32_MAX || ny > INT32_MAX) continue;
        const CellId n{static_cast<std::int32_t>(nx), static_cast<std::int32_t>(ny)};
        auto it = a.assignment.find(n);
        if (it != a.assignment.end() && it->second == Split::Train) {
          v.violations.push_back({c, n});
        }
      }
    }
  }
  return v;
}

/// Also checks that the labels cover exactly the grid's cells.
inline SplitValidation validate_splits(const SplitAssignment& a, const ScoreGrid& grid) {
  auto v = validate_splits(a);
  for (const auto& [c, s] : grid.cells()) {
    if (!a.assignment.count(c)) v.unlabeled.push_back(c);
  }
  for (const auto& [c, l] : a.assignment) {
    if (!grid.contains(c)) v.extra.push_back(c);
  }
  return v;
}

struct SplitStats {
  std::array<std::size_t, 3> available{};  // indexed by Split
  std::array<std::size_t, 3> total{};
  std::size_t available_cells = 0;
  std::size_t all_cells = 0;
  double coverage_pct = 0.0;
};

/// Per-split counts of cells for which `available` holds, plus coverage as a
/// percentage of all labeled cells.
inline SplitStats split_stats(const SplitAssignment& a,
                              const std::function<bool(const CellId&)>& available) {
  SplitStats s;
  for (const auto& [c, label] : a.assignment) {
    const auto i = static_cast<std::size_t>(label);
    ++s.total[i];
    ++s.all_cells;
    if (available(c)) {
      ++s.available[i];
      ++s.available_cells;
    }
  }
  s.coverage_pct = s.all_cells == 0 ? 0.0
                                    : 100.0 * static_cast<double>(s.available_cells) /
                                          static_cast<double>(s.all_cells);
  return s;
}

inline std::vector<SquareSpec> load_squares(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"origin_x", "origin_y", "side"});
  std::vector<SquareSpec> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto ox = csv::parse_int(t, r, 0);
    const auto oy = csv::parse_int(t, r, 1);
    const auto side = csv::parse_int(t, r, 2);
    if (ox < 0 || oy < 0 || ox > INT32_MAX || oy > INT32_MAX || side < 1 || side > INT32_MAX) {
      throw ValidationError(csv::where(t, r) + ": invalid square");
    }
    out.push_back({{static_cast<std::int32_t>(ox), static_cast<std::int32_t>(oy)},
                   static_cast<std::int32_t>(side)});
  }
  return out;
}

inline void save_squares(const std::vector<SquareSpec>& squares, const std::filesystem::path& path) {
  std::string text = "origin_x,origin_y,side\n";
  for (const auto& s : squares) {
    text += std::to_string(s.origin.cx) + "," + std::to_string(s.origin.cy) + "," +
            std::to_string(s.side) + "\n";
  }
  csv::write_text(path, text);
}

inline std::string format_splits(const SplitAssignment& a) {
  std::string text = "cell_x,cell_y,split\n";
  for (const auto& [c, l] : a.assignment) {
    text += std::to_string(c.cx) + "," + std::to_string(c.cy) + "," + to_string(l) + "\n";
  }
  return text;
}

inline void save_splits(const SplitAssignment& a, const std::filesystem::path& path) {
  csv::write_text(path, format_splits(a));
}

/// splits.csv does not carry the buffer width; the caller supplies it.
inline SplitAssignment load_splits(const std::filesystem::path& path,
                                   std::int32_t buffer_cells = kDefaultBufferCells) {
  const auto t = csv::read(path, {"cell_x", "cell_y", "split"});
  SplitAssignment a;
  a.buffer_cells = buffer_cells;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto cx = csv::parse_int(t, r, 0);
    const auto cy = csv::parse_int(t, r, 1);
    if (cx < 0 || cy < 0 || cx > INT32_MAX || cy > INT32_MAX) {
      throw ValidationError(csv::where(t, r) + ": cell index out of range");
    }
    Split label;
    try {
      label = parse_split(t.rows[r][2]);
    } catch (const ValidationError& e) {
      throw ValidationError(csv::where(t, r) + ": " + e.what());
    }
    const CellId c{static_cast<std::int32_t>(cx), static_cast<std::int32_t>(cy)};
    if (!a.assignment.emplace(c, label).second) {
      throw ValidationError(csv::where(t, r) + ": duplicate cell " + to_string(c));
    }
  }
  return a;
}

}  // namespace livmap
