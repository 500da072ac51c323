// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "livmap/error.hpp"
#include "livmap/features.hpp"
#include "livmap/grid.hpp"
#include "livmap/imagery.hpp"
#include "livmap/splits.hpp"

namespace livmap {

/// Seeded sampler with hand-written distributions, so a seed produces the
/// same stream with any standard library.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Knuth's multiplication method; fine for the small rates used here.
  std::uint32_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    std::uint32_t k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 42;
  std::int32_t width = 40;
  std::int32_t height = 40;
  std::size_t dim = 64;
  double images_per_cell = 3.0;
  /// Score noise as a fraction of the noise-free score standard deviation.
  double noise_rel = 0.05;
  /// Ratio of the ground term's weight to the aerial term's weight.
  double ground_weight = 1.0;
  /// Per-image spread of ground features around the cell latent.
  double image_noise = 0.5;
  /// Fraction of images whose top scene classes are outdoor / that carry a
  /// building class above the threshold.
  double outdoor_rate = 0.7;
  double building_rate = 0.4;

  void check() const {
    if (width < 1 || height < 1) throw ValidationError("synth grid must be at least 1x1");
    if (dim < 1) throw ValidationError("synth dim must be >= 1");
    if (images_per_cell < 0.0 || noise_rel < 0.0 || ground_weight < 0.0 || image_noise < 0.0) {
      throw ValidationError("synth parameters must be non-negative");
    }
  }
};

/// Everything the pipeline consumes, held in memory.
struct SynthDataset {
  ScoreGrid grid;
  std::vector<SquareSpec> squares;
  std::vector<GeoImage> images;
  ActivationTable activations;
  std::vector<bool> outdoor_mask;
  std::vector<std::size_t> building_classes;
  AerialStore aerial;
  GroundStore ground;
  std::vector<double> weights;  // u; the score is u.a + ground_weight * u.g + noise
  double sigma = 0.0;           // absolute noise standard deviation
  double clean_score_std = 0.0;
  double ground_scale = 1.0;
  std::vector<std::int64_t> expected_outdoor;    // ids built to pass the outdoors filter
  std::vector<std::int64_t> expected_buildings;  // ids built to pass the buildings filter
};

inline constexpr std::size_t kSynthOutdoorClasses = 200;  // classes [0, 200) are outdoor
inline constexpr std::size_t kSynthBuildingClasses = 24;  // classes [0, 24) are buildings

/// Test squares: a centered square for small grids, a 2x2 layout otherwise.
inline std::vector<SquareSpec> synth_squares(std::int32_t width, std::int32_t height) {
  const std::int32_t per_axis = (width >= 20 && height >= 20) ? 2 : 1;
  const std::int32_t side = std::max(1, std::min(width, height) / 7);
  std::vector<SquareSpec> out;
  for (std::int32_t qy = 0; qy < per_axis; ++qy) {
    for (std::int32_t qx = 0; qx < per_axis; ++qx) {
      const std::int32_t qw = width / per_axis;
      const std::int32_t qh = height / per_axis;
      out.push_back({{qx * qw + (qw - side) / 2, qy * qh + (qh - side) / 2}, side});
    }
  }
  return out;
}

/// Scene activations that pass (or fail) each filter by construction.
inline SceneActivations synth_activations(std::int64_t id, bool outdoor, bool building,
                                          SynthRng& rng) {
  SceneActivations a{id, std::vector<double>(kSceneClasses)};
  for (auto& v : a.act) v = 0.001 * rng.uniform();
  const std::size_t lo = outdoor ? kSynthBuildingClasses : kSynthOutdoorClasses;
  const std::size_t hi = outdoor ? kSynthOutdoorClasses : kSceneClasses;
  std::vector<std::size_t> picked;
  while (picked.size() < 10) {
    const std::size_t c = lo + rng.index(hi - lo);
    if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
  }
  for (std::size_t i = 0; i < picked.size(); ++i) {
    a.act[picked[i]] = 0.08 - 0.004 * static_cast<double>(i) + 0.001 * rng.uniform();
  }
  if (building) {
    // Strongest class overall, so an indoor image keeps 9 indoor classes in
    // its top 10 and still fails the outdoors filter.
    a.act[rng.index(kSynthBuildingClasses)] = 0.1 + 0.05 * rng.uniform();
  }
  return a;
}

inline SynthDataset make_synth(const SynthConfig& cfg) {
  cfg.check();
  SynthRng rng(cfg.seed);
  SynthDataset ds;
  const std::size_t d = cfg.dim;

  for (std::int32_t cy = 0; cy < cfg.height; ++cy) {
    for (std::int32_t cx = 0; cx < cfg.width; ++cx) ds.grid.insert({cx, cy}, 0.0);
  }

  ds.weights.resize(d);
  for (auto& w : ds.weights) w = rng.normal() / std::sqrt(static_cast<double>(d));

  ds.aerial = AerialStore(d);
  std::map<CellId, std::vector<double>> latent;
  for (const auto& [c, s] : ds.grid.cells()) {
    std::vector<double> a(d);
    for (auto& x : a) x = static_cast<double>(static_cast<float>(rng.normal()));
    ds.aerial.insert(c, std::move(a));
    std::vector<double> z(d);
    for (auto& x : z) x = rng.normal();
    latent.emplace(c, std::move(z));
  }

  std::map<std::int64_t, std::vector<double>> raw_ground;
  std::int64_t next_id = 1;
  for (const auto& [c, z] : latent) {
    const auto n = rng.poisson(cfg.images_per_cell);
    for (std::uint32_t k = 0; k < n; ++k) {
      GeoImage im;
      im.image_id = next_id++;
      im.x = kCellSizeM * (c.cx + rng.uniform());
      im.y = kCellSizeM * (c.cy + rng.uniform());
      im.source = ImageSource::Flickr;
      ds.images.push_back(im);
      std::vector<double> g(d);
      for (std::size_t j = 0; j < d; ++j) g[j] = z[j] + cfg.image_noise * rng.normal();
      raw_ground.emplace(im.image_id, std::move(g));

      const bool outdoor = rng.uniform() < cfg.outdoor_rate;
      const bool building = rng.uniform() < cfg.building_rate;
      ds.activations.emplace(im.image_id, synth_activations(im.image_id, outdoor, building, rng));
      if (outdoor) ds.expected_outdoor.push_back(im.image_id);
      if (building) ds.expected_buildings.push_back(im.image_id);
    }
  }

  ds.outdoor_mask.assign(kSceneClasses, false);
  for (std::size_t c = 0; c < kSynthOutdoorClasses; ++c) ds.outdoor_mask[c] = true;
  for (std::size_t c = 0; c < kSynthBuildingClasses; ++c) ds.building_classes.push_back(c);

  const auto assignment = assign_images_to_cells(ds.images, ds.grid, AssignMode::Patch);
  auto dot_u = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += ds.weights[j] * v[j];
    return s;
  };
  auto pooled_projection = [&](const std::map<std::int64_t, std::vector<double>>& store,
                               const CellId& c) -> std::optional<double> {
    auto it = assignment.cells.find(c);
    if (it == assignment.cells.end() || it->second.empty()) return std::nullopt;
    std::vector<std::pair<std::int64_t, const std::vector<double>*>> items;
    for (auto id : it->second) items.emplace_back(id, &store.at(id));
    return dot_u(pool_ground_features(std::move(items)).values);
  };

  // Rescale ground features so the pooled ground term has the same spread
  // as the aerial term before weighting.
  {
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& [c, s] : ds.grid.cells()) {
      if (auto p = pooled_projection(raw_ground, c)) {
        sum += *p;
        sum_sq += *p * *p;
        ++n;
      }
    }
    if (n >= 2) {
      const double mean = sum / static_cast<double>(n);
      const double var = sum_sq / static_cast<double>(n) - mean * mean;
      if (var > 0.0) ds.ground_scale = 1.0 / std::sqrt(var);
    }
  }
  ds.ground = GroundStore(d);
  for (auto& [id, g] : raw_ground) {
    for (auto& x : g) x = static_cast<double>(static_cast<float>(x * ds.ground_scale));
    ds.ground.insert(id, g);
  }

  std::map<CellId, double> clean;
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& [c, s] : ds.grid.cells()) {
    double v = dot_u(*ds.aerial.find(c));
    if (auto p = pooled_projection(ds.ground.entries(), c)) v += cfg.ground_weight * *p;
    clean[c] = v;
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(clean.size());
  const double mean = sum / n;
  ds.clean_score_std = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
  ds.sigma = cfg.noise_rel * ds.clean_score_std;

  ScoreGrid scored;
  for (const auto& [c, v] : clean) scored.insert(c, v + ds.sigma * rng.normal());
  ds.grid = std::move(scored);
  ds.squares = synth_squares(cfg.width, cfg.height);
  return ds;
}

}  // namespace livmap
