// Copyright 2026 The livmap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "livmap/csv.hpp"
#include "livmap/error.hpp"
#include "livmap/grid.hpp"
#include "livmap/imagery.hpp"
#include "livmap/parallel.hpp"
#include "livmap/splits.hpp"

namespace livmap {

inline constexpr std::size_t kDefaultFeatureDim = 2048;

enum class FeatureRole : std::uint8_t { Aerial, Ground, Pooled, Merged };

/// A backbone embedding (or a pooled / merged combination of them).
struct FeatureVector {
  FeatureRole role = FeatureRole::Aerial;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Keyed feature vectors of one uniform dimension. Aerial stores are keyed by
/// cell, ground stores by image id.
template <typename Key>
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, std::vector<double>>& entries() const { return entries_; }

  void insert(const Key& key, std::vector<double> values) {
    if (values.size() != dim_) {
      throw ValidationError("feature vector has dim " + std::to_string(values.size()) +
                            ", store expects " + std::to_string(dim_));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
    }
    if (!entries_.emplace(key, std::move(values)).second) {
      throw ValidationError("duplicate feature key");
    }
  }

  const std::vector<double>* find(const Key& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  friend bool operator==(const FeatureStore&, const FeatureStore&) = default;

 private:
  std::size_t dim_ = 0;
  std::map<Key, std::vector<double>> entries_;
};

using AerialStore = FeatureStore<CellId>;
using GroundStore = FeatureStore<std::int64_t>;

/// Element-wise mean of ground vectors. Summation runs in ascending image id
/// order regardless of input order, so any permutation gives identical bits.
inline FeatureVector pool_ground_features(
    std::vector<std::pair<std::int64_t, const std::vector<double>*>> items) {
  if (items.empty()) throw ValidationError("cannot pool an empty set of ground features");
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t dim = items.front().second->size();
  FeatureVector out{FeatureRole::Pooled, std::vector<double>(dim, 0.0)};
  for (const auto& [id, v] : items) {
    if (v->size() != dim) throw ValidationError("ground feature dims disagree");
    for (std::size_t d = 0; d < dim; ++d) out.values[d] += (*v)[d];
  }
  const double n = static_cast<double>(items.size());
  for (auto& x : out.values) x /= n;
  return out;
}

/// Convenience overload: vectors given in id order 0..N-1.
inline FeatureVector pool_ground_features(const std::vector<FeatureVector>& vectors) {
  std::vector<std::pair<std::int64_t, const std::vector<double>*>> items;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    items.emplace_back(static_cast<std::int64_t>(i), &vectors[i].values);
  }
  return pool_ground_features(std::move(items));
}

/// m = a + g, element-wise.
inline FeatureVector merge_features(const FeatureVector& aerial, const FeatureVector& pooled) {
  if (aerial.dim() != pooled.dim()) throw ValidationError("merge: feature dims disagree");
  FeatureVector m{FeatureRole::Merged, aerial.values};
  for (std::size_t d = 0; d < m.values.size(); ++d) m.values[d] += pooled.values[d];
  return m;
}

enum class Ablation : std::uint8_t { None, ZeroGround, ZeroAerial };

inline Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "ground" || s == "zero_ground") return Ablation::ZeroGround;
  if (s == "aerial" || s == "zero_aerial") return Ablation::ZeroAerial;
  throw ValidationError("unknown ablation '" + s + "' (expected none|ground|aerial)");
}

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::ZeroGround: return "ground";
    case Ablation::ZeroAerial: return "aerial";
  }
  return "?";
}

/// One training record: the aerial vector, the pooled ground vector and the
/// target score of a cell.
struct PatchBundle {
  CellId cell;
  FeatureVector aerial;
  FeatureVector pooled_ground;
  std::size_t n_images = 0;
  double target = 0.0;
};

struct Dataset {
  std::size_t dim = 0;
  std::array<std::vector<PatchBundle>, 3> splits;  // indexed by Split, each sorted by cell
  std::array<std::size_t, 3> excluded{};           // cells dropped for lack of images

  const std::vector<PatchBundle>& operator[](Split s) const {
    return splits[static_cast<std::size_t>(s)];
  }
  std::vector<PatchBundle>& operator[](Split s) { return splits[static_cast<std::size_t>(s)]; }
};

/// Assembles one bundle per labeled cell.
///
/// Without ablation, cells with no assigned images are left out and counted
/// in `excluded`. ZeroGround keeps every cell with a zero ground vector;
/// ZeroAerial zeroes the aerial vector and, like None, needs images.
inline Dataset build_dataset(const ScoreGrid& grid, const SplitAssignment& splits,
                             const ImageAssignment& assignment, const AerialStore& aerial,
                             const GroundStore& ground, Ablation ablation = Ablation::None) {
  const std::size_t dim = aerial.dim();
  if (ablation != Ablation::ZeroGround && ground.dim() != dim && ground.size() > 0) {
    throw ValidationError("aerial dim " + std::to_string(dim) + " and ground dim " +
                          std::to_string(ground.dim()) + " disagree");
  }
  if (dim == 0) throw ValidationError("feature dim must be >= 1");

  std::vector<std::pair<CellId, Split>> cells(splits.assignment.begin(), splits.assignment.end());
  std::vector<PatchBundle> bundles(cells.size());
  std::vector<char> keep(cells.size(), 0);

  parallel_for(cells.size(), [&](std::size_t i) {
    const auto& [cell, label] = cells[i];
    if (!grid.contains(cell)) {
      throw ValidationError("split cell " + to_string(cell) + " has no score");
    }
    PatchBundle b;
    b.cell = cell;
    b.target = grid.score(cell);
    if (ablation == Ablation::ZeroAerial) {
      b.aerial = {FeatureRole::Aerial, std::vector<double>(dim, 0.0)};
    } else {
      const auto* a = aerial.find(cell);
      if (!a) throw ValidationError("cell " + to_string(cell) + " has no aerial feature");
      b.aerial = {FeatureRole::Aerial, *a};
    }
    if (ablation == Ablation::ZeroGround) {
      b.pooled_ground = {FeatureRole::Pooled, std::vector<double>(dim, 0.0)};
      b.n_images = 0;
    } else {
      auto it = assignment.cells.find(cell);
      if (it == assignment.cells.end() || it->second.empty()) return;
      std::vector<std::pair<std::int64_t, const std::vector<double>*>> items;
      items.reserve(it->second.size());
      for (auto id : it->second) {
        const auto* g = ground.find(id);
        if (!g) throw ValidationError("image " + std::to_string(id) + " has no ground feature");
        items.emplace_back(id, g);
      }
      b.pooled_ground = pool_ground_features(std::move(items));
      b.n_images = it->second.size();
    }
    bundles[i] = std::move(b);
    keep[i] = 1;
  });

  Dataset ds;
  ds.dim = dim;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto s = static_cast<std::size_t>(cells[i].second);
    if (keep[i]) {
      ds.splits[s].push_back(std::move(bundles[i]));
    } else {
      ++ds.excluded[s];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::vector<std::string> feature_header(const std::vector<std::string>& keys,
                                               std::size_t dim) {
  auto h = keys;
  for (std::size_t d = 0; d < dim; ++d) h.push_back("f" + std::to_string(d));
  return h;
}

inline std::size_t feature_dim_from_header(const csv::Table& t, std::size_t key_cols) {
  const std::size_t dim = t.header.size() - key_cols;
  if (dim == 0) throw ValidationError(t.path + ": no feature columns");
  for (std::size_t d = 0; d < dim; ++d) {
    if (t.header[key_cols + d] != "f" + std::to_string(d)) {
      throw ValidationError(t.path + ": expected feature column f" + std::to_string(d));
    }
  }
  return dim;
}

inline std::vector<double> parse_feature_row(const csv::Table& t, std::size_t r,
                                             std::size_t key_cols, std::size_t dim) {
  std::vector<double> v(dim);
  for (std::size_t d = 0; d < dim; ++d) v[d] = csv::parse_real(t, r, key_cols + d);
  return v;
}

inline void append_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_le(const std::string& in, std::size_t& pos, int bytes,
                             const std::string& path) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) {
    throw ValidationError(path + ": truncated binary store");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += static_cast<std::size_t>(bytes);
  return v;
}

}  // namespace detail

inline AerialStore load_aerial_features(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"cell_x", "cell_y"});
  const auto dim = detail::feature_dim_from_header(t, 2);
  AerialStore store(dim);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto cx = csv::parse_int(t, r, 0);
    const auto cy = csv::parse_int(t, r, 1);
    if (cx < 0 || cy < 0 || cx > INT32_MAX || cy > INT32_MAX) {
      throw ValidationError(csv::where(t, r) + ": cell index out of range");
    }
    const CellId c{static_cast<std::int32_t>(cx), static_cast<std::int32_t>(cy)};
    if (store.find(c)) throw ValidationError(csv::where(t, r) + ": duplicate cell " + to_string(c));
    store.insert(c, detail::parse_feature_row(t, r, 2, dim));
  }
  return store;
}

inline GroundStore load_ground_features(const std::filesystem::path& path) {
  const auto t = csv::read(path, {"image_id"});
  const auto dim = detail::feature_dim_from_header(t, 1);
  GroundStore store(dim);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto id = csv::parse_int(t, r, 0);
    if (store.find(id)) {
      throw ValidationError(csv::where(t, r) + ": duplicate image_id " + std::to_string(id));
    }
    store.insert(id, detail::parse_feature_row(t, r, 1, dim));
  }
  return store;
}

/// Values are written at float precision, matching the 32-bit binary store.
inline void save_aerial_features(const AerialStore& store, const std::filesystem::path& path) {
  std::string text;
  const auto header = detail::feature_header({"cell_x", "cell_y"}, store.dim());
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += "\n";
  for (const auto& [c, v] : store.entries()) {
    text += std::to_string(c.cx) + "," + std::to_string(c.cy);
    for (double x : v) text += "," + csv::format_real(static_cast<float>(x));
    text += "\n";
  }
  csv::write_text(path, text);
}

inline void save_ground_features(const GroundStore& store, const std::filesystem::path& path) {
  std::string text;
  const auto header = detail::feature_header({"image_id"}, store.dim());
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += "\n";
  for (const auto& [id, v] : store.entries()) {
    text += std::to_string(id);
    for (double x : v) text += "," + csv::format_real(static_cast<float>(x));
    text += "\n";
  }
  csv::write_text(path, text);
}

inline constexpr char kFeatureStoreMagic[4] = {'L', 'V', 'F', '1'};

/// Binary store: "LVF1", u32 dim, u64 count, then per record a u64 key and
/// dim float32 values; all little-endian, records in ascending key order.
template <typename Key, typename KeyToU64>
std::string encode_feature_store(const FeatureStore<Key>& store, KeyToU64 to_u64) {
  std::string out(kFeatureStoreMagic, 4);
  detail::append_le(out, store.dim(), 4);
  detail::append_le(out, store.size(), 8);
  for (const auto& [k, v] : store.entries()) {
    detail::append_le(out, to_u64(k), 8);
    for (double x : v) detail::append_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
  }
  return out;
}

template <typename Key, typename U64ToKey>
FeatureStore<Key> decode_feature_store(const std::string& bytes, U64ToKey from_u64,
                                       const std::string& path = "<memory>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatureStoreMagic, 4) != 0) {
    throw ValidationError(path + ": not an LVF1 feature store");
  }
  std::size_t pos = 4;
  const auto dim = detail::read_le(bytes, pos, 4, path);
  const auto count = detail::read_le(bytes, pos, 8, path);
  if (dim == 0) throw ValidationError(path + ": zero feature dim");
  if ((bytes.size() - pos) != count * (8 + 4 * dim)) {
    throw ValidationError(path + ": size does not match header");
  }
  FeatureStore<Key> store(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const Key key = from_u64(detail::read_le(bytes, pos, 8, path));
    std::vector<double> v(dim);
    for (auto& x : v) {
      x = std::bit_cast<float>(static_cast<std::uint32_t>(detail::read_le(bytes, pos, 4, path)));
    }
    if (store.find(key)) throw ValidationError(path + ": duplicate key in record " + std::to_string(r));
    store.insert(key, std::move(v));
  }
  return store;
}

inline void save_aerial_binary(const AerialStore& s, const std::filesystem::path& path) {
  csv::write_text(path, encode_feature_store(s, [](const CellId& c) { return c.key(); }));
}
inline AerialStore load_aerial_binary(const std::filesystem::path& path) {
  return decode_feature_store<CellId>(csv::read_text(path), CellId::from_key, path.string());
}
inline void save_ground_binary(const GroundStore& s, const std::filesystem::path& path) {
  csv::write_text(path, encode_feature_store(
                            s, [](std::int64_t id) { return static_cast<std::uint64_t>(id); }));
}
inline GroundStore load_ground_binary(const std::filesystem::path& path) {
  return decode_feature_store<std::int64_t>(
      csv::read_text(path), [](std::uint64_t k) { return static_cast<std::int64_t>(k); },
      path.string());
}

/// Picks the loader from the file's magic bytes, falling back to CSV.
inline bool is_binary_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, kFeatureStoreMagic, 4) == 0;
}

inline AerialStore load_aerial_store(const std::filesystem::path& path) {
  return is_binary_store(path) ? load_aerial_binary(path) : load_aerial_features(path);
}
inline GroundStore load_ground_store(const std::filesystem::path& path) {
  return is_binary_store(path) ? load_ground_binary(path) : load_ground_features(path);
}

}  // namespace livmap
