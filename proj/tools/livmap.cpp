// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: synth | split | filter | train | eval | map.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "livmap/livmap.hpp"

namespace {

using livmap::RunManifest;

/// Flags mirroring RunManifest; only flags given on the command line
/// override the manifest.
struct ManifestFlags {
  std::optional<std::string> manifest;
  std::optional<std::string> scores, squares, splits, images, activations, outdoor_mask,
      building_classes, aerial_features, ground_features, out;
  std::optional<std::string> filter, ablation, assignment, tau_variant, source;
  std::optional<double> threshold, lr, weight_decay;
  std::optional<std::size_t> epochs, batch_size, freeze_adapter_epochs, map_block;
  std::optional<std::int32_t> buffer_cells;
  bool strict_threshold = false;
  bool decoupled_weight_decay = false;
  std::vector<double> map_range;

  void attach(CLI::App* app) {
    app->add_option("--manifest", manifest, "Run manifest (JSON)")->check(CLI::ExistingFile);
    app->add_option("--scores", scores, "scores.csv");
    app->add_option("--squares", squares, "squares.csv");
    app->add_option("--splits", splits, "splits.csv (default: generate from squares)");
    app->add_option("--images", images, "images.csv");
    app->add_option("--activations", activations, "activations.csv");
    app->add_option("--outdoor-mask", outdoor_mask, "outdoor_mask.csv");
    app->add_option("--building-classes", building_classes, "building_classes.csv");
    app->add_option("--aerial", aerial_features, "Aerial feature store (CSV or LVF1)");
    app->add_option("--ground", ground_features, "Ground feature store (CSV or LVF1)");
    app->add_option("--out", out, "Output directory");
    app->add_option("--filter", filter, "none|outdoors|buildings");
    app->add_option("--threshold", threshold, "Buildings filter activation threshold");
    app->add_flag("--strict-threshold", strict_threshold, "Use > instead of >= for the threshold");
    app->add_option("--ablate", ablation, "none|ground|aerial");
    app->add_option("--assignment", assignment, "patch|cell");
    app->add_option("--buffer", buffer_cells, "Validation buffer width in cells");
    app->add_option("--tau", tau_variant, "tau_a|tau_b");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_flag("--decoupled-weight-decay", decoupled_weight_decay);
    app->add_option("--batch-size", batch_size);
    app->add_option("--freeze-epochs", freeze_adapter_epochs,
                    "Epochs before the aerial adapter starts training");
    app->add_option("--source", source, "Label for prediction map files");
    app->add_option("--block", map_block, "Map pixels per cell");
    app->add_option("--range", map_range, "Fixed color range: MIN MAX")->expected(2);
  }

  RunManifest resolve(std::optional<std::uint64_t> seed) const {
    RunManifest m = manifest ? livmap::load_manifest(*manifest) : RunManifest{};
    auto set = [](const auto& flag, auto& dst) {
      if (flag) dst = *flag;
    };
    set(scores, m.scores);
    set(squares, m.squares);
    set(splits, m.splits);
    set(images, m.images);
    set(activations, m.activations);
    set(outdoor_mask, m.outdoor_mask);
    set(building_classes, m.building_classes);
    set(aerial_features, m.aerial_features);
    set(ground_features, m.ground_features);
    set(out, m.out_dir);
    set(filter, m.filter);
    set(ablation, m.ablation);
    set(assignment, m.assignment);
    set(tau_variant, m.tau_variant);
    set(source, m.source);
    set(threshold, m.threshold);
    set(lr, m.train.lr);
    set(weight_decay, m.train.weight_decay);
    set(epochs, m.train.epochs);
    set(batch_size, m.train.batch_size);
    set(freeze_adapter_epochs, m.train.freeze_adapter_epochs);
    set(map_block, m.map_block);
    set(buffer_cells, m.buffer_cells);
    set(seed, m.seed);
    if (strict_threshold) m.strict_threshold = true;
    if (decoupled_weight_decay) m.train.decoupled_weight_decay = true;
    if (map_range.size() == 2) m.map_range = std::make_pair(map_range[0], map_range[1]);
    m.sync();
    // Validate enumerations up front so typos fail before any work.
    livmap::parse_ablation(m.ablation);
    livmap::parse_assign_mode(m.assignment);
    livmap::parse_tau_variant(m.tau_variant);
    if (m.filter != "none") livmap::parse_filter_mode(m.filter);
    return m;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"livmap: housing-quality prediction from aerial and ground-level image features"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Random seed (u64)");
  app.fallthrough();

  livmap::SynthConfig synth;
  std::string synth_out = "synth";
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--out", synth_out, "Output directory");
  synth_cmd->add_option("--width", synth.width, "Grid width in cells");
  synth_cmd->add_option("--height", synth.height, "Grid height in cells");
  synth_cmd->add_option("--dim", synth.dim, "Feature dimension");
  synth_cmd->add_option("--lambda", synth.images_per_cell, "Mean images per cell");
  synth_cmd->add_option("--noise", synth.noise_rel,
                        "Score noise as a fraction of the clean score std");
  synth_cmd->add_option("--ground-weight", synth.ground_weight,
                        "Weight of the ground term relative to the aerial term");
  synth_cmd->add_option("--image-noise", synth.image_noise, "Per-image ground feature noise");

  ManifestFlags split_flags, filter_flags, train_flags, eval_flags, map_flags;
  auto* split_cmd = app.add_subcommand("split", "Assign cells to train/val/test");
  split_flags.attach(split_cmd);
  auto* filter_cmd = app.add_subcommand("filter", "Filter images by scene activations");
  filter_flags.attach(filter_cmd);
  auto* train_cmd = app.add_subcommand("train", "Train the fusion head");
  train_flags.attach(train_cmd);
  std::string eval_ckpt, map_ckpt, map_tile;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint per split");
  eval_flags.attach(eval_cmd);
  eval_cmd->add_option("--ckpt", eval_ckpt, "model.ckpt")->required()->check(CLI::ExistingFile);
  auto* map_cmd = app.add_subcommand("map", "Render truth and prediction maps of a test tile");
  map_flags.attach(map_cmd);
  map_cmd->add_option("--ckpt", map_ckpt, "model.ckpt")->required()->check(CLI::ExistingFile);
  map_cmd->add_option("--tile", map_tile, "Tile id: tile<k> for the k-th test square")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      if (seed) synth.seed = *seed;
      const auto info = livmap::cmd_synth(synth, synth_out);
      std::cout << info.dump(2) << "\n";
    } else if (*split_cmd) {
      std::cout << livmap::cmd_split(split_flags.resolve(seed)).dump(2) << "\n";
    } else if (*filter_cmd) {
      std::cout << livmap::cmd_filter(filter_flags.resolve(seed)).dump(2) << "\n";
    } else if (*train_cmd) {
      const auto m = train_flags.resolve(seed);
      const auto r = livmap::cmd_train(m);
      const auto& h = r.history;
      for (std::size_t e = 0; e < h.size(); ++e) {
        std::cout << "epoch " << (e + 1) << "  train_loss " << h.train_loss[e] << "  val_rmse "
                  << h.val_rmse[e] << "  val_tau " << h.val_tau[e] << "\n";
      }
      std::cout << "best epoch " << r.best_epoch << "; wrote " << m.out_dir << "/model.ckpt\n";
    } else if (*eval_cmd) {
      std::cout << livmap::cmd_eval(eval_flags.resolve(seed), eval_ckpt).dump(2) << "\n";
    } else if (*map_cmd) {
      for (const auto& p : livmap::cmd_map(map_flags.resolve(seed), map_ckpt, map_tile)) {
        std::cout << p.string() << "\n";
      }
    }
  } catch (const livmap::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
