// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/features.hpp"
#include "livmap/grid.hpp"
#include "livmap/metrics.hpp"
#include "livmap/training.hpp"

namespace livmap {

struct MetricsReport {
  double rmse = 0.0;
  double tau = 0.0;    // in the requested variant
  double tau_a = 0.0;  // always reported alongside
  TauVariant variant = TauVariant::TauB;
  std::size_t n = 0;
};

inline MetricsReport compute_metrics(const std::vector<double>& pred,
                                     const std::vector<double>& target, TauVariant variant) {
  MetricsReport r;
  r.variant = variant;
  r.n = pred.size();
  r.rmse = rmse(pred, target);
  if (r.n < 2) {
    r.tau = r.tau_a = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const auto k = kendall_counts(pred, target);
  r.tau_a = tau_from_counts(k, TauVariant::TauA);
  r.tau = variant == TauVariant::TauA ? r.tau_a : tau_from_counts(k, TauVariant::TauB);
  return r;
}

inline MetricsReport evaluate_split(const FusionHeadParams& params, const Dataset& ds, Split split,
                                    TauVariant variant = TauVariant::TauB) {
  const auto& bundles = ds[split];
  if (bundles.empty()) {
    throw ValidationError(std::string("split '") + to_string(split) + "' is empty");
  }
  if (params.dim() != ds.dim) {
    throw ValidationError("checkpoint dim " + std::to_string(params.dim()) +
                          " does not match feature dim " + std::to_string(ds.dim));
  }
  return compute_metrics(predict(params, bundles), targets_of(bundles), variant);
}

// ---------------------------------------------------------------------------
// Score maps

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kMissingColor{128, 128, 128};

/// Red (low) through white to blue (high); t is clamped to [0, 1].
inline Rgb red_white_blue(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto level = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  if (t <= 0.5) {
    const auto c = level(2.0 * t);
    return {255, c, c};
  }
  const auto c = level(2.0 * (1.0 - t));
  return {c, c, 255};
}

/// 8-bit RGB image, rows top to bottom.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Rgb at(std::size_t x, std::size_t y) const {
    const auto i = 3 * (y * width + x);
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(std::size_t x, std::size_t y, Rgb c) {
    const auto i = 3 * (y * width + x);
    rgb[i] = c.r;
    rgb[i + 1] = c.g;
    rgb[i + 2] = c.b;
  }
  friend bool operator==(const Raster&, const Raster&) = default;
};

struct RenderOptions {
  std::size_t block = 8;  // pixels per cell side
  std::optional<std::pair<double, double>> fixed_range;  // otherwise min/max of the values
};

struct ScoreMap {
  Raster raster;
  std::string csv;  // cell_x,cell_y,value for every rendered cell
};

/// Renders the cells inside `bounds`, north up (largest cy on the top row).
/// Cells without a value are gray and do not appear in the CSV.
inline ScoreMap render_score_map(const std::map<CellId, double>& values, const CellBounds& bounds,
                                 const RenderOptions& opt = {}) {
  if (bounds.empty()) throw ValidationError("render: empty bounds");
  if (opt.block == 0) throw ValidationError("render: block size must be >= 1");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  bool any = false;
  for (const auto& [c, v] : values) {
    if (!bounds.contains(c)) continue;
    if (!std::isfinite(v)) throw ValidationError("render: non-finite value at " + to_string(c));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    any = true;
  }
  if (!any) throw ValidationError("render: no values inside the map bounds");
  if (opt.fixed_range) {
    lo = opt.fixed_range->first;
    hi = opt.fixed_range->second;
    if (!(hi >= lo)) throw ValidationError("render: invalid fixed range");
  }

  const auto w = static_cast<std::size_t>(bounds.width());
  const auto h = static_cast<std::size_t>(bounds.height());
  ScoreMap out;
  out.raster.width = w * opt.block;
  out.raster.height = h * opt.block;
  out.raster.rgb.assign(3 * out.raster.width * out.raster.height, 0);
  out.csv = "cell_x,cell_y,value\n";
  for (std::size_t row = 0; row < h; ++row) {
    const auto cy = static_cast<std::int32_t>(bounds.max_cy - static_cast<std::int32_t>(row));
    for (std::size_t col = 0; col < w; ++col) {
      const CellId c{bounds.min_cx + static_cast<std::int32_t>(col), cy};
      Rgb color = kMissingColor;
      if (auto it = values.find(c); it != values.end()) {
        const double t = hi > lo ? (it->second - lo) / (hi - lo) : 0.5;
        color = red_white_blue(t);
      }
      for (std::size_t py = 0; py < opt.block; ++py) {
        for (std::size_t px = 0; px < opt.block; ++px) {
          out.raster.set(col * opt.block + px, row * opt.block + py, color);
        }
      }
    }
  }
  for (const auto& [c, v] : values) {
    if (!bounds.contains(c)) continue;
    out.csv += std::to_string(c.cx) + "," + std::to_string(c.cy) + "," + csv::format_real(v) + "\n";
  }
  return out;
}

namespace detail {

inline void png_u32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void png_chunk(std::string& out, const char* type, const std::string& data) {
  png_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  png_u32(out, static_cast<std::uint32_t>(
                   crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

/// 8-bit RGB PNG, no interlacing, filter type 0 on every row.
inline std::string encode_png(const Raster& img) {
  if (img.width == 0 || img.height == 0) throw ValidationError("png: empty image");
  std::string raw;
  raw.reserve((3 * img.width + 1) * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.append(reinterpret_cast<const char*>(img.rgb.data() + 3 * img.width * y), 3 * img.width);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK) {
    throw RuntimeError("png: compression failed");
  }
  packed.resize(packed_size);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::png_u32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::png_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // depth 8, RGB, deflate, filter 0, no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", packed);
  detail::png_chunk(out, "IEND", "");
  return out;
}

inline Raster decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) != 0) {
    throw ValidationError("png: bad signature");
  }
  auto u32 = [&](std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes.at(pos + i));
    return v;
  };
  Raster img;
  std::string idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const auto len = u32(pos);
    const std::string type = bytes.substr(pos + 4, 4);
    const std::string data = bytes.substr(pos + 8, len);
    if (type == "IHDR") {
      img.width = u32(pos + 8);
      img.height = u32(pos + 12);
      if (data.size() != 13 || data[8] != 8 || data[9] != 2 || data[12] != 0) {
        throw ValidationError("png: only 8-bit non-interlaced RGB is supported");
      }
    } else if (type == "IDAT") {
      idat += data;
    }
    pos += 12 + len;
  }
  std::string raw((3 * img.width + 1) * img.height, '\0');
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_size,
                 reinterpret_cast<const Bytef*>(idat.data()), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw ValidationError("png: corrupt image data");
  }
  img.rgb.resize(3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::size_t row = y * (3 * img.width + 1);
    if (raw[row] != 0) throw ValidationError("png: unsupported row filter");
    std::copy(raw.begin() + static_cast<std::ptrdiff_t>(row + 1),
              raw.begin() + static_cast<std::ptrdiff_t>(row + 1 + 3 * img.width),
              img.rgb.begin() + static_cast<std::ptrdiff_t>(3 * img.width * y));
  }
  return img;
}

/// Writes `<stem>.png` and `<stem>.csv`.
inline void save_score_map(const ScoreMap& map, const std::filesystem::path& stem) {
  csv::write_text(std::filesystem::path(stem.string() + ".png"), encode_png(map.raster));
  csv::write_text(std::filesystem::path(stem.string() + ".csv"), map.csv);
}

}  // namespace livmap
