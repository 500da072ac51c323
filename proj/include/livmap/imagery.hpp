// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/grid.hpp"
#include "livmap/parallel.hpp"

namespace livmap {

inline constexpr std::size_t kSceneClasses = 365;

enum class ImageSource : std::uint8_t { Gsv, Flickr };

inline const char* to_string(ImageSource s) { return s == ImageSource::Gsv ? "gsv" : "flickr"; }

/// A geotagged ground-level photo, coordinates already projected to meters.
struct GeoImage {
  std::int64_t image_id = 0;
  double x = 0.0;
  double y = 0.0;
  ImageSource source = ImageSource::Flickr;
};

/// Raw scene-classifier scores for one image, one entry per scene class.
struct SceneActivations {
  std::int64_t image_id = 0;
  std::vector<double> act;
};

enum class FilterMode : std::uint8_t { Outdoors, Buildings };

inline const char* to_string(FilterMode m) {
  return m == FilterMode::Outdoors ? "outdoors" : "buildings";
}

inline FilterMode parse_filter_mode(const std::string& s) {
  if (s == "outdoors") return FilterMode::Outdoors;
  if (s == "buildings") return FilterMode::Buildings;
  throw ValidationError("unknown filter mode '" + s + "' (expected outdoors|buildings)");
}

struct FilterSpec {
  FilterMode mode = FilterMode::Outdoors;
  std::vector<bool> outdoor_mask = std::vector<bool>(kSceneClasses, false);
  std::vector<std::size_t> building_classes;
  double threshold = 0.05;
  bool inclusive_threshold = true;
  std::size_t top_k = 10;
  std::size_t min_outdoor = 9;

  void check() const {
    if (!(threshold > 0.0)) throw ValidationError("filter threshold must be > 0");
    if (min_outdoor > top_k) throw ValidationError("min_outdoor must not exceed top_k");
    if (top_k > kSceneClasses) throw ValidationError("top_k exceeds the number of scene classes");
    if (outdoor_mask.size() != kSceneClasses) {
      throw ValidationError("outdoor mask must have " + std::to_string(kSceneClasses) + " entries");
    }
    for (auto c : building_classes) {
      if (c >= kSceneClasses) throw ValidationError("building class index out of range");
    }
  }
};

namespace detail {
inline void check_activation_length(const SceneActivations& a) {
  if (a.act.size() != kSceneClasses) {
    throw ValidationError("image " + std::to_string(a.image_id) + ": activation vector has " +
                          std::to_string(a.act.size()) + " entries, expected " +
                          std::to_string(kSceneClasses));
  }
}
}  // namespace detail

/// True iff at least `min_outdoor` of the `top_k` most activated classes are
/// outdoor classes. Equal activations rank the lower class index first.
inline bool filter_outdoors(const SceneActivations& acts, const FilterSpec& spec) {
  detail::check_activation_length(acts);
  std::vector<std::size_t> order(kSceneClasses);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto k = std::min(spec.top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (acts.act[a] != acts.act[b]) return acts.act[a] > acts.act[b];
                      return a < b;
                    });
  std::size_t outdoor = 0;
  for (std::size_t i = 0; i < k; ++i) outdoor += spec.outdoor_mask[order[i]] ? 1 : 0;
  return outdoor >= spec.min_outdoor;
}

/// True iff some building class reaches the activation threshold.
inline bool filter_buildings(const SceneActivations& acts, const FilterSpec& spec) {
  detail::check_activation_length(acts);
  for (auto c : spec.building_classes) {
    const double v = acts.act.at(c);
    if (spec.inclusive_threshold ? v >= spec.threshold : v > spec.threshold) return true;
  }
  return false;
}

inline bool passes_filter(const SceneActivations& acts, const FilterSpec& spec) {
  return spec.mode == FilterMode::Outdoors ? filter_outdoors(acts, spec)
                                           : filter_buildings(acts, spec);
}

struct FilterResult {
  std::vector<std::int64_t> retained;  // ascending image_id
  std::size_t input_count = 0;
  std::size_t retained_count = 0;

  /// Retained fraction; 0 for an empty corpus.
  double retention_rate() const {
    return input_count == 0 ? 0.0
                            : static_cast<double>(retained_count) / static_cast<double>(input_count);
  }
};

using ActivationTable = std::map<std::int64_t, SceneActivations>;

inline FilterResult apply_filter(const std::vector<GeoImage>& images,
                                 const ActivationTable& activations, const FilterSpec& spec) {
  spec.check();
  std::vector<std::int64_t> ids;
  ids.reserve(images.size());
  for (const auto& im : images) ids.push_back(im.image_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<const SceneActivations*> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = activations.find(ids[i]);
    if (it == activations.end()) {
      throw ValidationError("image " + std::to_string(ids[i]) + " has no activation row");
    }
    rows[i] = &it->second;
  }
  std::vector<char> keep(ids.size(), 0);
  parallel_for(ids.size(), [&](std::size_t i) { keep[i] = passes_filter(*rows[i], spec) ? 1 : 0; });

  FilterResult r;
  r.input_count = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (keep[i]) r.retained.push_back(ids[i]);
  }
  r.retained_count = r.retained.size();
  return r;
}

enum class AssignMode : std::uint8_t { Patch, Cell };

inline AssignMode parse_assign_mode(const std::string& s) {
  if (s == "patch") return AssignMode::Patch;
  if (s == "cell") return AssignMode::Cell;
  throw ValidationError("unknown assignment mode '" + s + "' (expected patch|cell)");
}

inline const char* to_string(AssignMode m) { return m == AssignMode::Patch ? "patch" : "cell"; }

struct ImageAssignment {
  std::map<CellId, std::vector<std::int64_t>> cells;  // id lists ascending
  std::size_t dropped = 0;  // images outside the grid's bounding box

  std::size_t image_count(const CellId& c) const {
    auto it = cells.find(c);
    return it == cells.end() ? 0 : it->second.size();
  }
};

/// Assigns each image to the scored cells it belongs to. Patch mode uses the
/// 500 m window around each cell center, so one image can land in up to 25
/// cells; cell mode uses only the containing cell.
inline ImageAssignment assign_images_to_cells(const std::vector<GeoImage>& images,
                                              const ScoreGrid& grid,
                                              AssignMode mode = AssignMode::Patch) {
  ImageAssignment out;
  const auto& b = grid.bounds();
  for (const auto& im : images) {
    CellId home;
    try {
      home = cell_of_point(grid, im.x, im.y);
    } catch (const ValidationError&) {
      ++out.dropped;
      continue;
    }
    if (mode == AssignMode::Cell) {
      if (grid.contains(home)) out.cells[home].push_back(im.image_id);
      continue;
    }
    // A patch reaches 2.5 cells past its center, so candidates lie within 3.
    for (std::int64_t cx = std::int64_t{home.cx} - 3; cx <= home.cx + 3; ++cx) {
      if (cx < b.min_cx || cx > b.max_cx) continue;
      for (std::int64_t cy = std::int64_t{home.cy} - 3; cy <= home.cy + 3; ++cy) {
        if (cy < b.min_cy || cy > b.max_cy) continue;
        const CellId c{static_cast<std::int32_t>(cx), static_cast<std::int32_t>(cy)};
        if (!grid.contains(c)) continue;
        if (patch_extent_of_cell(c).contains(im.x, im.y)) out.cells[c].push_back(im.image_id);
      }
    }
  }
  for (auto& [c, ids] : out.cells) std::sort(ids.begin(), ids.end());
  return out;
}

/// Keeps only images whose id is in `retained` (ascending).
inline std::vector<GeoImage> select_images(const std::vector<GeoImage>& images,
                                           const std::vector<std::int64_t>& retained) {
  std::vector<GeoImage> out;
  for (const auto& im : images) {
    if (std::binary_search(retained.begin(), retained.end(), im.image_id)) out.push_back(im);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline std::vector<GeoImage> load_images(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"image_id", "x", "y", "source"});
  std::vector<GeoImage> out;
  std::map<std::int64_t, std::size_t> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    GeoImage im;
    im.image_id = csv::parse_int(t, r, 0);
    im.x = csv::parse_real(t, r, 1);
    im.y = csv::parse_real(t, r, 2);
    const auto& src = t.rows[r][3];
    if (src == "gsv") {
      im.source = ImageSource::Gsv;
    } else if (src == "flickr") {
      im.source = ImageSource::Flickr;
    } else {
      throw ValidationError(csv::where(t, r) + ": unknown source '" + src + "'");
    }
    if (!seen.emplace(im.image_id, r).second) {
      throw ValidationError(csv::where(t, r) + ": duplicate image_id " +
                            std::to_string(im.image_id));
    }
    out.push_back(im);
  }
  return out;
}

inline void save_images(const std::vector<GeoImage>& images, const std::filesystem::path& path) {
  std::string text = "image_id,x,y,source\n";
  for (const auto& im : images) {
    text += std::to_string(im.image_id) + "," + csv::format_real(im.x) + "," +
            csv::format_real(im.y) + "," + to_string(im.source) + "\n";
  }
  csv::write_text(path, text);
}

inline ActivationTable load_activations(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"image_id"});
  if (t.header.size() != kSceneClasses + 1) {
    throw ValidationError(t.path + ": expected " + std::to_string(kSceneClasses + 1) +
                          " columns, got " + std::to_string(t.header.size()));
  }
  ActivationTable out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    SceneActivations a;
    a.image_id = csv::parse_int(t, r, 0);
    a.act.resize(kSceneClasses);
    for (std::size_t c = 0; c < kSceneClasses; ++c) {
      a.act[c] = csv::parse_real(t, r, c + 1);
      if (a.act[c] < 0.0) throw ValidationError(csv::where(t, r) + ": negative activation");
    }
    const auto id = a.image_id;
    if (!out.emplace(id, std::move(a)).second) {
      throw ValidationError(csv::where(t, r) + ": duplicate image_id " + std::to_string(id));
    }
  }
  return out;
}

inline void save_activations(const ActivationTable& acts, const std::filesystem::path& path) {
  std::string text = "image_id";
  for (std::size_t c = 0; c < kSceneClasses; ++c) text += ",a" + std::to_string(c);
  text += "\n";
  for (const auto& [id, a] : acts) {
    text += std::to_string(id);
    for (double v : a.act) text += "," + csv::format_real(v);
    text += "\n";
  }
  csv::write_text(path, text);
}

inline std::vector<bool> load_outdoor_mask(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"class_index", "is_outdoor"});
  std::vector<bool> mask(kSceneClasses, false);
  std::vector<bool> seen(kSceneClasses, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto c = csv::parse_int(t, r, 0);
    const auto v = csv::parse_int(t, r, 1);
    if (c < 0 || static_cast<std::size_t>(c) >= kSceneClasses) {
      throw ValidationError(csv::where(t, r) + ": class index out of range");
    }
    if (v != 0 && v != 1) throw ValidationError(csv::where(t, r) + ": is_outdoor must be 0 or 1");
    if (seen[static_cast<std::size_t>(c)]) {
      throw ValidationError(csv::where(t, r) + ": duplicate class index");
    }
    seen[static_cast<std::size_t>(c)] = true;
    mask[static_cast<std::size_t>(c)] = v == 1;
  }
  return mask;
}

inline void save_outdoor_mask(const std::vector<bool>& mask, const std::filesystem::path& path) {
  std::string text = "class_index,is_outdoor\n";
  for (std::size_t c = 0; c < mask.size(); ++c) {
    text += std::to_string(c) + "," + (mask[c] ? "1" : "0") + "\n";
  }
  csv::write_text(path, text);
}

inline std::vector<std::size_t> load_building_classes(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"class_index"});
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto c = csv::parse_int(t, r, 0);
    if (c < 0 || static_cast<std::size_t>(c) >= kSceneClasses) {
      throw ValidationError(csv::where(t, r) + ": class index out of range");
    }
    out.push_back(static_cast<std::size_t>(c));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline void save_building_classes(const std::vector<std::size_t>& classes,
                                  const std::filesystem::path& path) {
  std::string text = "class_index\n";
  for (auto c : classes) text += std::to_string(c) + "\n";
  csv::write_text(path, text);
}

}  // namespace livmap
