// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "livmap/features.hpp"
#include "test_util.hpp"

namespace livmap {
namespace {

using testing::TempDir;

FeatureVector ground(std::vector<double> v) { return {FeatureRole::Ground, std::move(v)}; }

TEST(Pool, Examples) {
  EXPECT_EQ(pool_ground_features({ground({1.5, -2.0})}).values, (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(pool_ground_features({ground({1, 2}), ground({3, 4})}).values,
            (std::vector<double>{2, 3}));
  EXPECT_THROW(pool_ground_features(std::vector<FeatureVector>{}), ValidationError);
  EXPECT_THROW(pool_ground_features({ground({1}), ground({1, 2})}), ValidationError);
}

TEST(Pool, PermutationGivesIdenticalBits) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1e3);
  std::vector<std::vector<double>> vs(17, std::vector<double>(8));
  for (auto& v : vs) {
    for (auto& x : v) x = n(rng);
  }
  std::vector<std::pair<std::int64_t, const std::vector<double>*>> items;
  for (std::size_t i = 0; i < vs.size(); ++i) items.emplace_back(100 + i, &vs[i]);
  const auto ref = pool_ground_features(items);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(items.begin(), items.end(), rng);
    EXPECT_EQ(pool_ground_features(items).values, ref.values);
  }
}

TEST(Pool, Linear) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double c : {2.0, -0.5, 0.25, 3.0, 1e-3}) {
    std::vector<FeatureVector> g, cg;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> v(6);
      for (auto& x : v) x = n(rng);
      g.push_back(ground(v));
      for (auto& x : v) x *= c;
      cg.push_back(ground(v));
    }
    const auto a = pool_ground_features(g).values;
    const auto b = pool_ground_features(cg).values;
    const bool power_of_two = std::ilogb(c) == std::log2(std::abs(c));
    for (std::size_t d = 0; d < a.size(); ++d) {
      if (power_of_two) {
        EXPECT_EQ(b[d], c * a[d]);
        continue;
      }
      // Scaling rounds each summand once, so the error is bounded by the
      // magnitude of the summands rather than of their (possibly cancelling) mean.
      double scale = 0.0;
      for (const auto& v : cg) scale += std::abs(v.values[d]) / static_cast<double>(cg.size());
      EXPECT_LE(std::abs(b[d] - c * a[d]), 8 * std::numeric_limits<double>::epsilon() * scale)
          << "c=" << c << " d=" << d;
    }
  }
}

TEST(Merge, Examples) {
  const FeatureVector a{FeatureRole::Aerial, {1, 1}};
  EXPECT_EQ(merge_features(a, {FeatureRole::Pooled, {0, 0}}).values, (std::vector<double>{1, 1}));
  const auto pooled = pool_ground_features({ground({2, 2}), ground({0, 4})});
  EXPECT_EQ(merge_features({FeatureRole::Aerial, {1, 0}}, pooled).values,
            (std::vector<double>{2, 3}));
  EXPECT_EQ(merge_features({FeatureRole::Aerial, {0, 0}}, {FeatureRole::Pooled, {5, -1}}).values,
            (std::vector<double>{5, -1}));
  EXPECT_THROW(merge_features(a, {FeatureRole::Pooled, {0}}), ValidationError);
}

TEST(FeatureStore, RejectsBadEntries) {
  AerialStore s(2);
  s.insert({0, 0}, {1, 2});
  EXPECT_THROW(s.insert({0, 0}, {1, 2}), ValidationError);
  EXPECT_THROW(s.insert({1, 0}, {1}), ValidationError);
  EXPECT_THROW(s.insert({2, 0}, {1, std::nan("")}), ValidationError);
  EXPECT_EQ(s.find({5, 5}), nullptr);
}

struct Fixture {
  ScoreGrid grid;
  SplitAssignment splits;
  ImageAssignment assignment;
  AerialStore aerial{2};
  GroundStore ground{2};
};

/// 4x1 strip: cells 0,1 train, 2 val, 3 test; cell 1 has no images.
Fixture small_fixture() {
  Fixture f;
  for (std::int32_t x = 0; x < 4; ++x) {
    f.grid.insert({x, 0}, 10.0 + x);
    f.aerial.insert({x, 0}, {1.0 * x, -1.0});
  }
  f.splits.assignment = {{{0, 0}, Split::Train}, {{1, 0}, Split::Train},
                         {{2, 0}, Split::Val},   {{3, 0}, Split::Test}};
  f.assignment.cells[{0, 0}] = {1, 2};
  f.assignment.cells[{2, 0}] = {3};
  f.assignment.cells[{3, 0}] = {3};
  f.ground.insert(1, {2, 2});
  f.ground.insert(2, {0, 4});
  f.ground.insert(3, {1, 1});
  return f;
}

TEST(BuildDataset, ExcludesCellsWithoutImages) {
  const auto f = small_fixture();
  const auto ds = build_dataset(f.grid, f.splits, f.assignment, f.aerial, f.ground);
  ASSERT_EQ(ds[Split::Train].size(), 1u);
  EXPECT_EQ(ds.excluded[static_cast<std::size_t>(Split::Train)], 1u);
  const auto& b = ds[Split::Train][0];
  EXPECT_EQ(b.cell, (CellId{0, 0}));
  EXPECT_EQ(b.pooled_ground.values, (std::vector<double>{1, 3}));
  EXPECT_EQ(b.n_images, 2u);
  EXPECT_EQ(b.target, 10.0);
  EXPECT_EQ(ds[Split::Val].size(), 1u);
  EXPECT_EQ(ds[Split::Test].size(), 1u);
}

TEST(BuildDataset, ZeroGroundKeepsEveryCell) {
  const auto f = small_fixture();
  const auto ds = build_dataset(f.grid, f.splits, f.assignment, f.aerial, f.ground,
                                Ablation::ZeroGround);
  EXPECT_EQ(ds[Split::Train].size(), 2u);
  for (const auto& split : ds.splits) {
    for (const auto& b : split) {
      EXPECT_EQ(b.pooled_ground.values, (std::vector<double>{0, 0}));
      EXPECT_EQ(merge_features(b.aerial, b.pooled_ground).values, b.aerial.values);
    }
  }
}

TEST(BuildDataset, ZeroAerial) {
  const auto f = small_fixture();
  const auto ds = build_dataset(f.grid, f.splits, f.assignment, f.aerial, f.ground,
                                Ablation::ZeroAerial);
  EXPECT_EQ(ds[Split::Train].size(), 1u);
  EXPECT_EQ(ds[Split::Val][0].aerial.values, (std::vector<double>{0, 0}));
}

TEST(BuildDataset, MissingFeaturesAreErrors) {
  auto f = small_fixture();
  f.assignment.cells[{3, 0}] = {99};
  EXPECT_THROW(build_dataset(f.grid, f.splits, f.assignment, f.aerial, f.ground), ValidationError);
  auto g = small_fixture();
  AerialStore partial(2);
  partial.insert({0, 0}, {0, 0});
  EXPECT_THROW(build_dataset(g.grid, g.splits, g.assignment, partial, g.ground), ValidationError);
  GroundStore wrong(3);
  EXPECT_THROW(build_dataset(g.grid, g.splits, g.assignment, g.aerial, wrong), ValidationError);
}

TEST(FeatureFiles, CsvRoundTrip) {
  TempDir dir;
  const auto f = small_fixture();
  save_aerial_features(f.aerial, dir.path() / "aerial.csv");
  save_ground_features(f.ground, dir.path() / "ground.csv");
  EXPECT_EQ(load_aerial_store(dir.path() / "aerial.csv"), f.aerial);
  EXPECT_EQ(load_ground_store(dir.path() / "ground.csv"), f.ground);
}

TEST(FeatureFiles, BinaryRoundTripAtFloatPrecision) {
  TempDir dir;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t dim : {1u, 7u, 64u}) {
    AerialStore a(dim);
    GroundStore g(dim);
    for (std::int32_t i = 0; i < 25; ++i) {
      std::vector<double> v(dim);
      for (auto& x : v) x = static_cast<float>(n(rng));
      a.insert({i * 3, 1000 - i}, v);
      g.insert(i * 7 + 1, v);
    }
    save_aerial_binary(a, dir.path() / "a.lvf");
    save_ground_binary(g, dir.path() / "g.lvf");
    EXPECT_TRUE(is_binary_store(dir.path() / "a.lvf"));
    EXPECT_EQ(load_aerial_store(dir.path() / "a.lvf"), a);
    EXPECT_EQ(load_ground_store(dir.path() / "g.lvf"), g);
  }
}

TEST(FeatureFiles, BinaryRejectsCorruption) {
  TempDir dir;
  const auto f = small_fixture();
  save_ground_binary(f.ground, dir.path() / "g.lvf");
  auto bytes = csv::read_text(dir.path() / "g.lvf");
  EXPECT_THROW(load_ground_binary(dir.file("t.lvf", bytes.substr(0, bytes.size() - 2))),
               ValidationError);
  bytes[0] = 'X';
  EXPECT_FALSE(is_binary_store(dir.file("m.lvf", bytes)));
}

TEST(FeatureFiles, CsvErrorsNameTheRow) {
  TempDir dir;
  try {
    load_ground_features(dir.file("g.csv", "image_id,f0,f1\n1,0,0\n1,1,1\n"));
    ADD_FAILURE();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_aerial_features(dir.file("a.csv", "cell_x,cell_y,f1\n0,0,1\n")),
               ValidationError);
}

}  // namespace
}  // namespace livmap
