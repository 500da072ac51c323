// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "livmap/evaluation.hpp"
#include "test_util.hpp"

namespace livmap {
namespace {

using testing::TempDir;

TEST(ColorRamp, Anchors) {
  EXPECT_EQ(red_white_blue(0.0), (Rgb{255, 0, 0}));
  EXPECT_EQ(red_white_blue(0.5), (Rgb{255, 255, 255}));
  EXPECT_EQ(red_white_blue(1.0), (Rgb{0, 0, 255}));
  EXPECT_EQ(red_white_blue(-3.0), red_white_blue(0.0));
  EXPECT_EQ(red_white_blue(0.25), (Rgb{255, 128, 128}));
}

TEST(RenderScoreMap, MinRedMaxBlueMissingGray) {
  const std::map<CellId, double> values = {{{0, 0}, 1.0}, {{1, 0}, 3.0}, {{0, 1}, 2.0}};
  const CellBounds bounds{0, 0, 1, 1};
  const auto m = render_score_map(values, bounds, {2, std::nullopt});
  EXPECT_EQ(m.raster.width, 4u);
  EXPECT_EQ(m.raster.height, 4u);
  // North up: row 0 of the raster is cy = 1.
  EXPECT_EQ(m.raster.at(0, 3), (Rgb{255, 0, 0}));
  EXPECT_EQ(m.raster.at(3, 2), (Rgb{0, 0, 255}));
  EXPECT_EQ(m.raster.at(1, 0), (Rgb{255, 255, 255}));
  EXPECT_EQ(m.raster.at(2, 0), kMissingColor);
  EXPECT_EQ(m.csv, "cell_x,cell_y,value\n0,0,1\n0,1,2\n1,0,3\n");
}

TEST(RenderScoreMap, EqualValuesAreWhite) {
  const std::map<CellId, double> values = {{{4, 4}, 0.7}, {{5, 4}, 0.7}};
  const auto m = render_score_map(values, {4, 4, 5, 4}, {1, std::nullopt});
  EXPECT_EQ(m.raster.at(0, 0), (Rgb{255, 255, 255}));
  EXPECT_EQ(m.raster.at(1, 0), (Rgb{255, 255, 255}));
}

TEST(RenderScoreMap, FixedRangeAndErrors) {
  const std::map<CellId, double> values = {{{0, 0}, 0.0}};
  const auto m = render_score_map(values, {0, 0, 0, 0}, {1, std::make_pair(-1.0, 1.0)});
  EXPECT_EQ(m.raster.at(0, 0), (Rgb{255, 255, 255}));
  EXPECT_THROW(render_score_map(values, {0, 0, 0, 0}, {0, std::nullopt}), ValidationError);
  EXPECT_THROW(render_score_map(values, {3, 3, 4, 4}), ValidationError);
  EXPECT_THROW(render_score_map(values, {0, 0, 0, 0}, {1, std::make_pair(1.0, -1.0)}),
               ValidationError);
}

TEST(Png, RoundTrip) {
  TempDir dir;
  std::map<CellId, double> values;
  for (std::int32_t x = 0; x < 9; ++x) {
    for (std::int32_t y = 0; y < 5; ++y) {
      if ((x + y) % 4) values[{x, y}] = x * 0.3 - y;
    }
  }
  const auto m = render_score_map(values, {0, 0, 8, 4});
  const auto bytes = encode_png(m.raster);
  EXPECT_EQ(bytes.substr(1, 3), "PNG");
  EXPECT_EQ(decode_png(bytes), m.raster);
  save_score_map(m, dir.path() / "tile");
  EXPECT_EQ(csv::read_text(dir.path() / "tile.png"), bytes);
  EXPECT_EQ(csv::read_text(dir.path() / "tile.csv"), m.csv);
  EXPECT_THROW(decode_png("not a png"), ValidationError);
}

TEST(ComputeMetrics, OracleScores) {
  const std::vector<double> t = {0.1, 0.5, 0.3, 0.9};
  const auto r = compute_metrics(t, t, TauVariant::TauB);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.tau, 1.0);
  EXPECT_EQ(r.tau_a, 1.0);
  EXPECT_EQ(r.n, 4u);
}

}  // namespace
}  // namespace livmap
