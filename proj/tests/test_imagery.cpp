// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "livmap/imagery.hpp"
#include "test_util.hpp"

namespace livmap {
namespace {

using testing::TempDir;

ScoreGrid dense_grid(std::int32_t w, std::int32_t h) {
  ScoreGrid g;
  for (std::int32_t y = 0; y < h; ++y) {
    for (std::int32_t x = 0; x < w; ++x) g.insert({x, y}, 0.0);
  }
  return g;
}

/// Mask with classes [0, 100) outdoor.
FilterSpec outdoor_spec() {
  FilterSpec s;
  for (std::size_t c = 0; c < 100; ++c) s.outdoor_mask[c] = true;
  return s;
}

FilterSpec building_spec() {
  FilterSpec s;
  s.mode = FilterMode::Buildings;
  s.building_classes = {3, 50, 200};
  return s;
}

/// Top 10 classes: `outdoor` of them outdoor (classes 0..), the rest indoor (300..).
SceneActivations top10(std::int64_t id, std::size_t outdoor) {
  SceneActivations a{id, std::vector<double>(kSceneClasses, 0.0)};
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t c = i < outdoor ? i : 300 + i;
    a.act[c] = 0.5 - 0.01 * static_cast<double>(i);
  }
  return a;
}

TEST(OutdoorsFilter, Examples) {
  const auto s = outdoor_spec();
  EXPECT_TRUE(filter_outdoors(top10(1, 10), s));
  EXPECT_TRUE(filter_outdoors(top10(1, 9), s));
  EXPECT_FALSE(filter_outdoors(top10(1, 8), s));
}

TEST(OutdoorsFilter, TiesBreakTowardLowerClassIndex) {
  const auto s = outdoor_spec();
  // Nine outdoor classes on top, then a tie at 0.1 between indoor 150 and
  // outdoor 60: class 60 wins the tenth slot.
  SceneActivations a{1, std::vector<double>(kSceneClasses, 0.0)};
  for (std::size_t i = 0; i < 8; ++i) a.act[i] = 0.5;
  a.act[200] = 0.4;
  a.act[60] = 0.1;
  a.act[150] = 0.1;
  EXPECT_TRUE(filter_outdoors(a, s));
  a.act[60] = 0.0;
  a.act[150] = 0.1;
  a.act[151] = 0.1;
  EXPECT_FALSE(filter_outdoors(a, s));
}

TEST(OutdoorsFilter, InvariantToPermutationOutsideTopK) {
  const auto s = outdoor_spec();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = top10(1, trial % 11);
    std::vector<double> rest;
    std::vector<std::size_t> slots;
    for (std::size_t c = 0; c < kSceneClasses; ++c) {
      if (a.act[c] == 0.0) {
        a.act[c] = 0.3 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        slots.push_back(c);
        rest.push_back(a.act[c]);
      }
    }
    const bool before = filter_outdoors(a, s);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t i = 0; i < slots.size(); ++i) a.act[slots[i]] = rest[i];
    EXPECT_EQ(filter_outdoors(a, s), before);
  }
}

TEST(BuildingsFilter, ThresholdBoundary) {
  auto s = building_spec();
  SceneActivations a{1, std::vector<double>(kSceneClasses, 0.0)};
  a.act[50] = 0.05;
  EXPECT_TRUE(filter_buildings(a, s));
  s.inclusive_threshold = false;
  EXPECT_FALSE(filter_buildings(a, s));
  s.inclusive_threshold = true;
  a.act[50] = 0.049;
  EXPECT_FALSE(filter_buildings(a, s));
  a.act[51] = 0.9;  // not a building class
  EXPECT_FALSE(filter_buildings(a, s));
  s.building_classes.clear();
  a.act[50] = 1.0;
  EXPECT_FALSE(filter_buildings(a, s));
}

TEST(BuildingsFilter, MonotoneInThreshold) {
  std::mt19937_64 rng(9);
  std::vector<GeoImage> images;
  ActivationTable acts;
  for (std::int64_t id = 1; id <= 300; ++id) {
    images.push_back({id, 0.0, 0.0, ImageSource::Gsv});
    SceneActivations a{id, std::vector<double>(kSceneClasses)};
    for (auto& v : a.act) v = 0.12 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    acts.emplace(id, a);
  }
  auto s = building_spec();
  std::size_t prev = images.size() + 1;
  for (double t : {0.01, 0.03, 0.05, 0.08, 0.11, 0.2}) {
    s.threshold = t;
    const auto r = apply_filter(images, acts, s);
    EXPECT_LE(r.retained_count, prev);
    prev = r.retained_count;
  }
}

TEST(ApplyFilter, OrderIndependentAndSorted) {
  std::vector<GeoImage> images;
  ActivationTable acts;
  for (std::int64_t id = 10; id >= 1; --id) {
    images.push_back({id, 0.0, 0.0, ImageSource::Flickr});
    acts.emplace(id, top10(id, id % 2 ? 10 : 5));
  }
  const auto r = apply_filter(images, acts, outdoor_spec());
  EXPECT_EQ(r.retained, (std::vector<std::int64_t>{1, 3, 5, 7, 9}));
  EXPECT_EQ(r.input_count, 10u);
  EXPECT_DOUBLE_EQ(r.retention_rate(), 0.5);
  std::reverse(images.begin(), images.end());
  EXPECT_EQ(apply_filter(images, acts, outdoor_spec()).retained, r.retained);
}

TEST(ApplyFilter, EmptyAndAllFailing) {
  const auto empty = apply_filter({}, {}, outdoor_spec());
  EXPECT_EQ(empty.retained_count, 0u);
  EXPECT_EQ(empty.retention_rate(), 0.0);
  std::vector<GeoImage> images = {{1, 0, 0, ImageSource::Gsv}};
  ActivationTable acts;
  acts.emplace(1, top10(1, 0));
  const auto none = apply_filter(images, acts, outdoor_spec());
  EXPECT_TRUE(none.retained.empty());
  EXPECT_EQ(none.retention_rate(), 0.0);
}

TEST(ApplyFilter, MissingActivationsNameTheImage) {
  std::vector<GeoImage> images = {{42, 0, 0, ImageSource::Gsv}};
  try {
    apply_filter(images, {}, outdoor_spec());
    ADD_FAILURE();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos) << e.what();
  }
}

TEST(AssignImages, Examples) {
  const auto g = dense_grid(10, 10);
  const std::vector<GeoImage> center = {{1, 350.0, 350.0, ImageSource::Gsv}};
  const auto a = assign_images_to_cells(center, g, AssignMode::Patch);
  EXPECT_EQ(a.image_count({3, 3}), 1u);
  EXPECT_EQ(a.cells.size(), 25u);  // 3 +- 2 in both axes

  // 260 m east of the center of (3,3): outside its 250 m half-width.
  const std::vector<GeoImage> east = {{2, 350.0 + 260.0, 350.0, ImageSource::Gsv}};
  EXPECT_EQ(assign_images_to_cells(east, g, AssignMode::Patch).image_count({3, 3}), 0u);

  const auto c = assign_images_to_cells(center, g, AssignMode::Cell);
  EXPECT_EQ(c.cells.size(), 1u);
  EXPECT_EQ(c.image_count({3, 3}), 1u);
}

TEST(AssignImages, AtMostTwentyFiveCellsAndOutsideDropped) {
  const auto g = dense_grid(15, 15);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1500.0);
  std::vector<GeoImage> images;
  for (std::int64_t id = 1; id <= 500; ++id) images.push_back({id, u(rng), u(rng), ImageSource::Gsv});
  images.push_back({999, 1600.0, 10.0, ImageSource::Gsv});
  const auto a = assign_images_to_cells(images, g, AssignMode::Patch);
  EXPECT_EQ(a.dropped, 1u);
  std::map<std::int64_t, std::size_t> per_image;
  for (const auto& [c, ids] : a.cells) {
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    for (auto id : ids) {
      ++per_image[id];
      const auto& im = images[static_cast<std::size_t>(id - 1)];
      EXPECT_TRUE(patch_extent_of_cell(c).contains(im.x, im.y));
    }
  }
  for (const auto& [id, n] : per_image) EXPECT_LE(n, 25u);
}

TEST(ImageFiles, RoundTrip) {
  TempDir dir;
  std::vector<GeoImage> images = {{7, 12.5, 99.0, ImageSource::Gsv}, {3, 0.0, 1.0, ImageSource::Flickr}};
  save_images(images, dir.path() / "images.csv");
  const auto back = load_images(dir.path() / "images.csv");
  ASSERT_EQ(back.size(), 2u);
  ActivationTable acts;
  acts.emplace(7, top10(7, 9));
  save_activations(acts, dir.path() / "act.csv");
  const auto acts2 = load_activations(dir.path() / "act.csv");
  EXPECT_EQ(acts2.at(7).act, acts.at(7).act);

  const auto mask = outdoor_spec().outdoor_mask;
  save_outdoor_mask(mask, dir.path() / "mask.csv");
  EXPECT_EQ(load_outdoor_mask(dir.path() / "mask.csv"), mask);
  save_building_classes({3, 50}, dir.path() / "b.csv");
  EXPECT_EQ(load_building_classes(dir.path() / "b.csv"), (std::vector<std::size_t>{3, 50}));
}

TEST(ImageFiles, Errors) {
  TempDir dir;
  EXPECT_THROW(load_images(dir.file("i.csv", "image_id,x,y,source\n1,0,0,gsv\n1,1,1,gsv\n")),
               ValidationError);
  EXPECT_THROW(load_images(dir.file("j.csv", "image_id,x,y,source\n1,0,0,camera\n")),
               ValidationError);
  EXPECT_THROW(load_activations(dir.file("a.csv", "image_id,c0\n1,0.5\n")), ValidationError);
}

}  // namespace
}  // namespace livmap
