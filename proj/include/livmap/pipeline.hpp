// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/evaluation.hpp"
#include "livmap/features.hpp"
#include "livmap/grid.hpp"
#include "livmap/imagery.hpp"
#include "livmap/splits.hpp"
#include "livmap/synth.hpp"
#include "livmap/training.hpp"

namespace livmap {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Inputs and settings of one run. A manifest file (JSON) overrides the
/// defaults; command-line flags override the manifest. Relative paths in a
/// manifest file are resolved against the file's directory.
struct RunManifest {
  // Inputs; empty means "not provided".
  std::string scores;
  std::string squares;
  std::string splits;
  std::string images;
  std::string activations;
  std::string outdoor_mask;
  std::string building_classes;
  std::string aerial_features;
  std::string ground_features;

  std::string filter = "none";  // none | outdoors | buildings
  double threshold = 0.05;
  bool strict_threshold = false;
  std::string ablation = "none";  // none | ground | aerial
  std::string assignment = "patch";
  std::int32_t buffer_cells = kDefaultBufferCells;
  std::string tau_variant = "tau_b";

  TrainConfig train;
  std::uint64_t seed = 0;

  std::string out_dir = "out";
  std::string source = "prediction";  // label used in map file names
  std::size_t map_block = 8;
  std::optional<std::pair<double, double>> map_range;

  /// Fills `train.seed` from `seed`.
  void sync() { train.seed = seed; }
};

inline json to_json(const RunManifest& m) {
  json j;
  j["scores"] = m.scores;
  j["squares"] = m.squares;
  j["splits"] = m.splits;
  j["images"] = m.images;
  j["activations"] = m.activations;
  j["outdoor_mask"] = m.outdoor_mask;
  j["building_classes"] = m.building_classes;
  j["aerial_features"] = m.aerial_features;
  j["ground_features"] = m.ground_features;
  j["filter"] = m.filter;
  j["threshold"] = m.threshold;
  j["strict_threshold"] = m.strict_threshold;
  j["ablation"] = m.ablation;
  j["assignment"] = m.assignment;
  j["buffer_cells"] = m.buffer_cells;
  j["tau_variant"] = m.tau_variant;
  j["epochs"] = m.train.epochs;
  j["lr"] = m.train.lr;
  j["weight_decay"] = m.train.weight_decay;
  j["decoupled_weight_decay"] = m.train.decoupled_weight_decay;
  j["batch_size"] = m.train.batch_size;
  j["freeze_adapter_epochs"] = m.train.freeze_adapter_epochs;
  j["beta1"] = m.train.beta1;
  j["beta2"] = m.train.beta2;
  j["adam_eps"] = m.train.adam_eps;
  j["bn_eps"] = m.train.bn_eps;
  j["bn_momentum"] = m.train.bn_momentum;
  j["seed"] = m.seed;
  j["out_dir"] = m.out_dir;
  j["source"] = m.source;
  j["map_block"] = m.map_block;
  if (m.map_range) {
    j["map_range"] = {m.map_range->first, m.map_range->second};
  }
  return j;
}

/// Applies the keys present in `j` on top of `m`.
inline void apply_json(RunManifest& m, const json& j, const fs::path& base_dir) {
  auto path_field = [&](const char* key, std::string& dst) {
    if (!j.contains(key)) return;
    const auto s = j.at(key).get<std::string>();
    dst = s.empty() || fs::path(s).is_absolute() ? s : (base_dir / s).lexically_normal().string();
  };
  auto field = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  try {
    path_field("scores", m.scores);
    path_field("squares", m.squares);
    path_field("splits", m.splits);
    path_field("images", m.images);
    path_field("activations", m.activations);
    path_field("outdoor_mask", m.outdoor_mask);
    path_field("building_classes", m.building_classes);
    path_field("aerial_features", m.aerial_features);
    path_field("ground_features", m.ground_features);
    path_field("out_dir", m.out_dir);
    field("filter", m.filter);
    field("threshold", m.threshold);
    field("strict_threshold", m.strict_threshold);
    field("ablation", m.ablation);
    field("assignment", m.assignment);
    field("buffer_cells", m.buffer_cells);
    field("tau_variant", m.tau_variant);
    field("epochs", m.train.epochs);
    field("lr", m.train.lr);
    field("weight_decay", m.train.weight_decay);
    field("decoupled_weight_decay", m.train.decoupled_weight_decay);
    field("batch_size", m.train.batch_size);
    field("freeze_adapter_epochs", m.train.freeze_adapter_epochs);
    field("beta1", m.train.beta1);
    field("beta2", m.train.beta2);
    field("adam_eps", m.train.adam_eps);
    field("bn_eps", m.train.bn_eps);
    field("bn_momentum", m.train.bn_momentum);
    field("seed", m.seed);
    field("source", m.source);
    field("map_block", m.map_block);
    if (j.contains("map_range") && !j.at("map_range").is_null()) {
      const auto& r = j.at("map_range");
      m.map_range = std::make_pair(r.at(0).get<double>(), r.at(1).get<double>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.sync();
}

inline RunManifest load_manifest(const fs::path& path) {
  RunManifest m;
  json j;
  try {
    j = json::parse(csv::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  apply_json(m, j, path.parent_path());
  return m;
}

inline void write_json(const fs::path& path, const json& j) {
  csv::write_text(path, j.dump(2) + "\n");
}

/// Every command leaves the resolved manifest next to its outputs.
inline void write_manifest_copy(const RunManifest& m) {
  write_json(fs::path(m.out_dir) / "manifest.json", to_json(m));
}

namespace detail {
inline const std::string& require(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("manifest does not name the ") + what);
  if (!fs::exists(path)) {
    throw ValidationError(std::string(what) + " file '" + path + "' does not exist");
  }
  return path;
}
}  // namespace detail

/// Filter settings from the manifest, loading class metadata as needed.
inline FilterSpec filter_spec_of(const RunManifest& m) {
  FilterSpec spec;
  spec.mode = parse_filter_mode(m.filter);
  spec.threshold = m.threshold;
  spec.inclusive_threshold = !m.strict_threshold;
  if (spec.mode == FilterMode::Outdoors) {
    spec.outdoor_mask = load_outdoor_mask(detail::require(m.outdoor_mask, "outdoor mask"));
  } else {
    spec.building_classes =
        load_building_classes(detail::require(m.building_classes, "building classes"));
  }
  spec.check();
  return spec;
}

/// The splits named in the manifest, or generated from its squares.
inline SplitAssignment resolve_splits(const RunManifest& m, const ScoreGrid& grid) {
  if (!m.splits.empty()) {
    auto a = load_splits(detail::require(m.splits, "splits"), m.buffer_cells);
    const auto v = validate_splits(a, grid);
    if (!v.ok()) throw ValidationError("splits file does not match the score grid or leaks test cells");
    return a;
  }
  return generate_splits(grid, load_squares(detail::require(m.squares, "squares")),
                         m.buffer_cells);
}

/// Images kept for the run: all of them, or those passing the filter.
inline std::vector<GeoImage> resolve_images(const RunManifest& m) {
  auto images = load_images(detail::require(m.images, "images"));
  if (m.filter == "none") return images;
  const auto acts = load_activations(detail::require(m.activations, "activations"));
  return select_images(images, apply_filter(images, acts, filter_spec_of(m)).retained);
}

struct RunContext {
  ScoreGrid grid;
  SplitAssignment splits;
  Dataset dataset;
};

inline RunContext load_run(const RunManifest& m) {
  RunContext ctx;
  ctx.grid = load_score_grid(detail::require(m.scores, "scores"));
  ctx.splits = resolve_splits(m, ctx.grid);
  const auto ablation = parse_ablation(m.ablation);
  const auto aerial = ablation == Ablation::ZeroAerial && m.aerial_features.empty()
                          ? AerialStore()
                          : load_aerial_store(detail::require(m.aerial_features, "aerial features"));
  ImageAssignment assignment;
  GroundStore ground;
  if (ablation != Ablation::ZeroGround) {
    assignment = assign_images_to_cells(resolve_images(m), ctx.grid, parse_assign_mode(m.assignment));
    ground = load_ground_store(detail::require(m.ground_features, "ground features"));
  }
  if (ablation == Ablation::ZeroAerial && aerial.dim() == 0) {
    ctx.dataset = build_dataset(ctx.grid, ctx.splits, assignment, AerialStore(ground.dim()), ground,
                                ablation);
  } else {
    ctx.dataset = build_dataset(ctx.grid, ctx.splits, assignment, aerial, ground, ablation);
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Commands

/// Writes a complete synthetic dataset plus a manifest referencing it.
inline json cmd_synth(const SynthConfig& cfg, const fs::path& out_dir) {
  const auto ds = make_synth(cfg);
  save_score_grid(ds.grid, out_dir / "scores.csv");
  save_squares(ds.squares, out_dir / "squares.csv");
  save_images(ds.images, out_dir / "images.csv");
  save_activations(ds.activations, out_dir / "activations.csv");
  save_outdoor_mask(ds.outdoor_mask, out_dir / "outdoor_mask.csv");
  save_building_classes(ds.building_classes, out_dir / "building_classes.csv");
  save_aerial_features(ds.aerial, out_dir / "aerial_features.csv");
  save_ground_features(ds.ground, out_dir / "ground_features.csv");

  json info;
  info["seed"] = cfg.seed;
  info["width"] = cfg.width;
  info["height"] = cfg.height;
  info["dim"] = cfg.dim;
  info["images_per_cell"] = cfg.images_per_cell;
  info["noise_rel"] = cfg.noise_rel;
  info["ground_weight"] = cfg.ground_weight;
  info["sigma"] = ds.sigma;
  info["clean_score_std"] = ds.clean_score_std;
  info["ground_scale"] = ds.ground_scale;
  info["n_images"] = ds.images.size();
  info["n_expected_outdoors"] = ds.expected_outdoor.size();
  info["n_expected_buildings"] = ds.expected_buildings.size();
  write_json(out_dir / "synth_info.json", info);

  RunManifest m;
  m.scores = "scores.csv";
  m.squares = "squares.csv";
  m.images = "images.csv";
  m.activations = "activations.csv";
  m.outdoor_mask = "outdoor_mask.csv";
  m.building_classes = "building_classes.csv";
  m.aerial_features = "aerial_features.csv";
  m.ground_features = "ground_features.csv";
  m.out_dir = "run";
  m.seed = cfg.seed;
  m.sync();
  write_json(out_dir / "manifest.json", to_json(m));
  return info;
}

inline json stats_json(const SplitStats& s) {
  json j;
  for (auto sp : kAllSplits) j[to_string(sp)] = s.available[static_cast<std::size_t>(sp)];
  j["coverage_pct"] = s.coverage_pct;
  j["available_cells"] = s.available_cells;
  j["all_cells"] = s.all_cells;
  return j;
}

/// splits.csv plus per-subset counts and coverage (aerial, all ground
/// images, and each filter whose inputs are available).
inline json cmd_split(const RunManifest& m) {
  const auto grid = load_score_grid(detail::require(m.scores, "scores"));
  const auto squares = load_squares(detail::require(m.squares, "squares"));
  const auto a = generate_splits(grid, squares, m.buffer_cells);
  const auto v = validate_splits(a, grid);
  if (!v.ok()) throw RuntimeError("generated splits failed validation");
  save_splits(a, fs::path(m.out_dir) / "splits.csv");

  json report;
  report["seed"] = m.seed;
  report["buffer_cells"] = m.buffer_cells;
  report["squares"] = squares.size();
  if (!m.aerial_features.empty() && fs::exists(m.aerial_features)) {
    const auto aerial = load_aerial_store(m.aerial_features);
    report["subsets"]["aerial"] =
        stats_json(split_stats(a, [&](const CellId& c) { return aerial.find(c) != nullptr; }));
  } else {
    report["subsets"]["aerial"] = stats_json(split_stats(a, [](const CellId&) { return true; }));
  }
  if (!m.images.empty() && fs::exists(m.images)) {
    const auto images = load_images(m.images);
    const auto mode = parse_assign_mode(m.assignment);
    auto add_subset = [&](const std::string& name, const std::vector<GeoImage>& subset) {
      const auto assign = assign_images_to_cells(subset, grid, mode);
      report["subsets"][name] =
          stats_json(split_stats(a, [&](const CellId& c) { return assign.image_count(c) > 0; }));
    };
    add_subset("ground", images);
    if (!m.activations.empty() && fs::exists(m.activations)) {
      const auto acts = load_activations(m.activations);
      for (const char* mode_name : {"outdoors", "buildings"}) {
        RunManifest fm = m;
        fm.filter = mode_name;
        const bool have_meta = std::string(mode_name) == "outdoors"
                                   ? !m.outdoor_mask.empty() && fs::exists(m.outdoor_mask)
                                   : !m.building_classes.empty() && fs::exists(m.building_classes);
        if (!have_meta) continue;
        const auto r = apply_filter(images, acts, filter_spec_of(fm));
        add_subset(mode_name, select_images(images, r.retained));
      }
    }
  }
  for (auto sp : kAllSplits) report["total"][to_string(sp)] = a.count(sp);
  write_json(fs::path(m.out_dir) / "split_stats.json", report);
  write_manifest_copy(m);
  return report;
}

/// Retained image ids for the manifest's filter mode plus a retention report.
inline json cmd_filter(const RunManifest& m) {
  if (m.filter == "none") throw ValidationError("filter command needs --filter outdoors|buildings");
  const auto spec = filter_spec_of(m);
  const auto images = load_images(detail::require(m.images, "images"));
  const auto acts = load_activations(detail::require(m.activations, "activations"));
  const auto r = apply_filter(images, acts, spec);

  std::string text = "image_id\n";
  for (auto id : r.retained) text += std::to_string(id) + "\n";
  csv::write_text(fs::path(m.out_dir) / ("retained_" + m.filter + ".csv"), text);

  json report;
  report["seed"] = m.seed;
  report["mode"] = m.filter;
  report["threshold"] = m.threshold;
  report["input"] = r.input_count;
  report["retained"] = r.retained_count;
  report["retention_rate"] = r.retention_rate();
  write_json(fs::path(m.out_dir) / "filter_report.json", report);
  write_manifest_copy(m);
  return report;
}

/// Trains the head; writes model.ckpt (best validation epoch) and history.csv.
inline TrainResult cmd_train(const RunManifest& m) {
  const auto ctx = load_run(m);
  auto cfg = m.train;
  cfg.seed = m.seed;
  auto result = train_model(ctx.dataset, cfg, {}, parse_tau_variant(m.tau_variant));
  save_checkpoint(result.params, fs::path(m.out_dir) / "model.ckpt");
  csv::write_text(fs::path(m.out_dir) / "history.csv", format_history(result.history));

  json report;
  report["seed"] = m.seed;
  report["best_epoch"] = result.best_epoch;
  report["ablation"] = m.ablation;
  report["filter"] = m.filter;
  for (auto sp : kAllSplits) {
    report["cells"][to_string(sp)] = ctx.dataset[sp].size();
    report["excluded"][to_string(sp)] = ctx.dataset.excluded[static_cast<std::size_t>(sp)];
  }
  write_json(fs::path(m.out_dir) / "train_report.json", report);
  write_manifest_copy(m);
  return result;
}

/// Per-split metrics (metrics.json) and per-cell predictions (predictions.csv).
inline json cmd_eval(const RunManifest& m, const fs::path& ckpt) {
  const auto params = load_checkpoint(ckpt);
  const auto ctx = load_run(m);
  if (params.dim() != ctx.dataset.dim) {
    throw ValidationError("checkpoint dim " + std::to_string(params.dim()) +
                          " does not match feature dim " + std::to_string(ctx.dataset.dim));
  }
  const auto variant = parse_tau_variant(m.tau_variant);
  json report;
  report["seed"] = m.seed;
  report["ablation"] = m.ablation;
  report["filter"] = m.filter;

  std::map<CellId, std::string> rows;
  for (auto sp : kAllSplits) {
    const auto& bundles = ctx.dataset[sp];
    if (bundles.empty()) continue;
    const auto pred = predict(params, bundles);
    const auto target = targets_of(bundles);
    const auto r = compute_metrics(pred, target, variant);
    json js;
    js["rmse"] = r.rmse;
    js["tau"] = std::isnan(r.tau) ? json(nullptr) : json(r.tau);
    js["tau_a"] = std::isnan(r.tau_a) ? json(nullptr) : json(r.tau_a);
    js["variant"] = to_string(variant);
    js["n"] = r.n;
    report["splits"][to_string(sp)] = js;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
      const auto& c = bundles[i].cell;
      rows[c] = std::to_string(c.cx) + "," + std::to_string(c.cy) + "," + to_string(sp) + "," +
                csv::format_real(target[i]) + "," + csv::format_real(pred[i]) + "\n";
    }
  }
  std::string text = "cell_x,cell_y,split,target,prediction\n";
  for (const auto& [c, line] : rows) text += line;
  csv::write_text(fs::path(m.out_dir) / "predictions.csv", text);
  write_json(fs::path(m.out_dir) / "metrics.json", report);
  write_manifest_copy(m);
  return report;
}

/// Ground-truth and prediction maps of one test square, named
/// `<tile>_truth` and `<tile>_<source>`. Tiles are "tile<k>" (or "<k>")
/// for the k-th row of squares.csv.
inline std::vector<fs::path> cmd_map(const RunManifest& m, const fs::path& ckpt,
                                     const std::string& tile) {
  const auto squares = load_squares(detail::require(m.squares, "squares"));
  std::string digits = tile.rfind("tile", 0) == 0 ? tile.substr(4) : tile;
  std::size_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoul(digits, &used);
    if (used != digits.size()) throw std::invalid_argument(tile);
  } catch (const std::exception&) {
    throw ValidationError("unknown tile id '" + tile + "'");
  }
  if (k >= squares.size()) throw ValidationError("unknown tile id '" + tile + "'");
  const auto& sq = squares[k];

  const auto params = load_checkpoint(ckpt);
  const auto ctx = load_run(m);
  if (params.dim() != ctx.dataset.dim) {
    throw ValidationError("checkpoint dim " + std::to_string(params.dim()) +
                          " does not match feature dim " + std::to_string(ctx.dataset.dim));
  }
  std::vector<PatchBundle> in_tile;
  for (auto sp : kAllSplits) {
    for (const auto& b : ctx.dataset[sp]) {
      if (sq.contains(b.cell)) in_tile.push_back(b);
    }
  }
  if (in_tile.empty()) throw ValidationError("tile '" + tile + "' has no cells with data");
  const auto pred = predict(params, in_tile);
  std::map<CellId, double> truth_map, pred_map;
  for (std::size_t i = 0; i < in_tile.size(); ++i) {
    truth_map[in_tile[i].cell] = in_tile[i].target;
    pred_map[in_tile[i].cell] = pred[i];
  }
  const CellBounds bounds{sq.origin.cx, sq.origin.cy, sq.last_cx(), sq.last_cy()};
  RenderOptions opt;
  opt.block = m.map_block;
  opt.fixed_range = m.map_range;
  const std::string name = "tile" + std::to_string(k);
  const fs::path truth_stem = fs::path(m.out_dir) / (name + "_truth");
  const fs::path pred_stem = fs::path(m.out_dir) / (name + "_" + m.source);
  save_score_map(render_score_map(truth_map, bounds, opt), truth_stem);
  save_score_map(render_score_map(pred_map, bounds, opt), pred_stem);
  write_manifest_copy(m);
  return {truth_stem.string() + ".png", pred_stem.string() + ".png"};
}

}  // namespace livmap
