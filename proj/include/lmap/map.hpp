#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmap/error.hpp"
#include "lmap/geometry.hpp"

namespace lmap {

using KeyFrameId = std::int64_t;
using MapPointId = std::int64_t;

// ----------------------------------------------------------------------------
// FeatureGrid
// ----------------------------------------------------------------------------

// Bucketed keypoint index for radius queries. Built once per keyframe;
// keypoint positions never change after insertion.
class FeatureGrid {

  public:

  static constexpr double kCellSize = 16.0;

  FeatureGrid() = default;

  FeatureGrid(const std::vector<KeyPoint>& keypoints, int width, int height) {
    _cols = std::max(1, static_cast<int>(std::ceil(width / kCellSize)));
    _rows = std::max(1, static_cast<int>(std::ceil(height / kCellSize)));
    _cells.assign(static_cast<std::size_t>(_cols * _rows), {});
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
      _cells[_cell_index(_col(keypoints[i].u), _row(keypoints[i].v))].push_back(static_cast<int>(i));
    }
  }

  /// Keypoint indices within `radius` of (u, v) whose level lies in
  /// [min_level, max_level], in ascending index order.
  std::vector<int> query(const std::vector<KeyPoint>& keypoints, double u, double v, double radius,
                         int min_level, int max_level) const {
    std::vector<int> out;
    if (_cells.empty()) {
      return out;
    }
    const int c0 = _col(u - radius);
    const int c1 = _col(u + radius);
    const int r0 = _row(v - radius);
    const int r1 = _row(v + radius);
    const double r2 = radius * radius;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        for (int idx : _cells[_cell_index(c, r)]) {
          const KeyPoint& kp = keypoints[static_cast<std::size_t>(idx)];
          if (kp.level < min_level || kp.level > max_level) {
            continue;
          }
          const double du = kp.u - u;
          const double dv = kp.v - v;
          if (du * du + dv * dv <= r2) {
            out.push_back(idx);
          }
        }
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  private:

  int _col(double u) const { return std::clamp(static_cast<int>(std::floor(u / kCellSize)), 0, _cols - 1); }
  int _row(double v) const { return std::clamp(static_cast<int>(std::floor(v / kCellSize)), 0, _rows - 1); }
  std::size_t _cell_index(int c, int r) const { return static_cast<std::size_t>(r * _cols + c); }

  int _cols {0};
  int _rows {0};
  std::vector<std::vector<int>> _cells;
};

// ----------------------------------------------------------------------------
// KeyFrame / MapPoint
// ----------------------------------------------------------------------------

struct KeyFrame {
  KeyFrameId id {0};
  double timestamp {0.0};
  SE3Pose pose;
  CameraIntrinsics intrinsics;
  std::vector<KeyPoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;
  std::vector<std::optional<MapPointId>> bindings;
  bool alive {true};
  FeatureGrid grid;

  const BinaryDescriptor& descriptor_of(int kp_index) const {
    return descriptors[static_cast<std::size_t>(keypoints[static_cast<std::size_t>(kp_index)].descriptor_index)];
  }

  std::size_t bound_count() const {
    return static_cast<std::size_t>(std::count_if(bindings.begin(), bindings.end(),
                                                  [](const auto& b) { return b.has_value(); }));
  }
};

struct MapPoint {
  MapPointId id {0};
  Vec3 position {Vec3::Zero()};
  BinaryDescriptor rep_descriptor;
  std::map<KeyFrameId, int> observations;
  std::vector<int> scale_counts;
  int found_count {1};
  int visible_count {1};
  KeyFrameId first_kf_id {0};
  bool alive {true};

  double found_ratio() const {
    return visible_count > 0 ? static_cast<double>(found_count) / visible_count : 0.0;
  }
};

struct MapConfig {
  int min_obs_keep {2};
  int min_covis_weight {1};
};

struct AuditViolation {
  enum class Kind { kScaleCounts, kCovisibility, kBinding, kDeadObserver, kDescriptor };
  Kind kind;
  std::string message;
};

// ----------------------------------------------------------------------------
// Map
// ----------------------------------------------------------------------------

// Keyframes, map points and the covisibility graph. Every mutation keeps the
// per-scale counters, covisibility weights and binding bijection consistent;
// audit() recomputes all three by brute force. Dead entities are tombstoned
// and their ids are never reused.
class Map {

  public:

  explicit Map(MapConfig config = {}) : _config{config} {}

  const MapConfig& config() const noexcept { return _config; }

  // -- keyframes -------------------------------------------------------------

  KeyFrameId insert_keyframe(KeyFrame kf) {
    require(!_keyframes.contains(kf.id), ErrorCode::kInvalidArgument,
            "duplicate keyframe id " + std::to_string(kf.id));
    require(kf.keypoints.size() == kf.descriptors.size(), ErrorCode::kInvalidArgument,
            "keypoint/descriptor count mismatch");
    kf.intrinsics.validate();
    for (const KeyPoint& kp : kf.keypoints) {
      require(kp.level >= 0 && kp.level < kf.intrinsics.num_levels, ErrorCode::kInvalidArgument,
              "keypoint level out of range");
      require(kp.descriptor_index >= 0 && static_cast<std::size_t>(kp.descriptor_index) < kf.descriptors.size(),
              ErrorCode::kInvalidArgument, "keypoint descriptor index out of range");
    }
    std::vector<std::optional<MapPointId>> preset = std::move(kf.bindings);
    if (!preset.empty()) {
      require(preset.size() == kf.keypoints.size(), ErrorCode::kInvalidArgument, "binding count mismatch");
    }
    kf.bindings.assign(kf.keypoints.size(), std::nullopt);
    kf.alive = true;
    kf.grid = FeatureGrid(kf.keypoints, kf.intrinsics.width, kf.intrinsics.height);
    const KeyFrameId id = kf.id;
    _keyframes.emplace(id, std::move(kf));
    _covis[id];
    for (std::size_t i = 0; i < preset.size(); ++i) {
      if (preset[i]) {
        add_observation(*preset[i], id, static_cast<int>(i));
      }
    }
    return id;
  }

  bool has_keyframe(KeyFrameId id) const { return _keyframes.contains(id); }

  bool keyframe_alive(KeyFrameId id) const {
    auto it = _keyframes.find(id);
    return it != _keyframes.end() && it->second.alive;
  }

  const KeyFrame& keyframe(KeyFrameId id) const {
    auto it = _keyframes.find(id);
    require(it != _keyframes.end(), ErrorCode::kInvalidArgument, "unknown keyframe " + std::to_string(id));
    return it->second;
  }

  /// All keyframes (live and tombstoned) in id order.
  const std::map<KeyFrameId, KeyFrame>& keyframes() const noexcept { return _keyframes; }

  std::vector<KeyFrameId> live_keyframe_ids() const {
    std::vector<KeyFrameId> ids;
    for (const auto& [id, kf] : _keyframes) {
      if (kf.alive) {
        ids.push_back(id);
      }
    }
    return ids;
  }

  std::size_t live_keyframe_count() const {
    return static_cast<std::size_t>(std::count_if(_keyframes.begin(), _keyframes.end(),
                                                  [](const auto& e) { return e.second.alive; }));
  }

  void set_keyframe_pose(KeyFrameId id, const SE3Pose& pose) { _live_keyframe(id).pose = pose; }

  /// Erases every observation of the keyframe and tombstones it.
  void remove_keyframe(KeyFrameId id) {
    KeyFrame& kf = _live_keyframe(id);
    for (std::size_t i = 0; i < kf.bindings.size(); ++i) {
      if (kf.bindings[i]) {
        const MapPointId mp = *kf.bindings[i];
        if (_points[static_cast<std::size_t>(mp)].alive) {
          erase_observation(mp, id);
        } else {
          kf.bindings[i].reset();
        }
      }
    }
    kf.alive = false;
    _covis.erase(id);
  }

  // -- map points ------------------------------------------------------------

  /// Creates a live point and records the given (keyframe, keypoint) slots.
  MapPointId create_map_point(const Vec3& position, KeyFrameId first_kf,
                              std::span<const std::pair<KeyFrameId, int>> observations) {
    require(!observations.empty(), ErrorCode::kInvalidArgument, "a map point needs an observation");
    for (const auto& [kf_id, kp] : observations) {
      const KeyFrame& kf = _live_keyframe(kf_id);
      require(kp >= 0 && static_cast<std::size_t>(kp) < kf.keypoints.size(), ErrorCode::kInvalidArgument,
              "keypoint index out of range");
      require(!kf.bindings[static_cast<std::size_t>(kp)], ErrorCode::kConflict, "keypoint slot already bound");
    }
    MapPoint mp;
    mp.id = static_cast<MapPointId>(_points.size());
    mp.position = position;
    mp.first_kf_id = first_kf;
    mp.scale_counts.assign(static_cast<std::size_t>(_keyframes.at(observations.front().first).intrinsics.num_levels), 0);
    _points.push_back(std::move(mp));
    const MapPointId id = _points.back().id;
    for (const auto& [kf_id, kp] : observations) {
      add_observation(id, kf_id, kp);
    }
    return id;
  }

  const MapPoint& point(MapPointId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < _points.size(), ErrorCode::kInvalidArgument,
            "unknown map point " + std::to_string(id));
    return _points[static_cast<std::size_t>(id)];
  }

  bool point_alive(MapPointId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < _points.size() && _points[static_cast<std::size_t>(id)].alive;
  }

  /// All map points ever created, indexed by id.
  const std::vector<MapPoint>& points() const noexcept { return _points; }

  std::size_t live_point_count() const {
    return static_cast<std::size_t>(std::count_if(_points.begin(), _points.end(),
                                                  [](const MapPoint& p) { return p.alive; }));
  }

  std::size_t observation_count() const {
    std::size_t n = 0;
    for (const MapPoint& p : _points) {
      n += p.observations.size();
    }
    return n;
  }

  void set_point_position(MapPointId id, const Vec3& position) { _live_point(id).position = position; }

  void increase_found(MapPointId id, int n = 1) { _live_point(id).found_count += n; }
  void increase_visible(MapPointId id, int n = 1) { _live_point(id).visible_count += n; }

  /// Live points bound in a keyframe, in keypoint order.
  std::vector<MapPointId> points_in_keyframe(KeyFrameId id) const {
    std::vector<MapPointId> out;
    for (const auto& b : keyframe(id).bindings) {
      if (b && point_alive(*b)) {
        out.push_back(*b);
      }
    }
    return out;
  }

  // -- observations ----------------------------------------------------------

  void add_observation(MapPointId mp_id, KeyFrameId kf_id, int kp_index) {
    MapPoint& mp = _live_point(mp_id);
    KeyFrame& kf = _live_keyframe(kf_id);
    require(kp_index >= 0 && static_cast<std::size_t>(kp_index) < kf.keypoints.size(),
            ErrorCode::kInvalidArgument, "keypoint index out of range");
    require(!kf.bindings[static_cast<std::size_t>(kp_index)], ErrorCode::kConflict,
            "keypoint slot already bound");
    require(!mp.observations.contains(kf_id), ErrorCode::kConflict,
            "map point already observed by keyframe " + std::to_string(kf_id));

    for (const auto& [other, idx] : mp.observations) {
      _bump_edge(kf_id, other, +1);
    }
    mp.observations.emplace(kf_id, kp_index);
    kf.bindings[static_cast<std::size_t>(kp_index)] = mp_id;
    mp.scale_counts[static_cast<std::size_t>(kf.keypoints[static_cast<std::size_t>(kp_index)].level)] += 1;
    _refresh_descriptor(mp);
  }

  void erase_observation(MapPointId mp_id, KeyFrameId kf_id) {
    MapPoint& mp = _live_point(mp_id);
    auto it = mp.observations.find(kf_id);
    require(it != mp.observations.end(), ErrorCode::kInvalidArgument,
            "map point " + std::to_string(mp_id) + " has no observation in keyframe " + std::to_string(kf_id));
    _detach(mp, it);
    if (static_cast<int>(mp.observations.size()) < _config.min_obs_keep) {
      kill_map_point(mp_id);
    } else {
      _refresh_descriptor(mp);
    }
  }

  /// Clears every binding of the point and tombstones it.
  void kill_map_point(MapPointId mp_id) {
    MapPoint& mp = _live_point(mp_id);
    while (!mp.observations.empty()) {
      _detach(mp, mp.observations.begin());
    }
    mp.alive = false;
  }

  /// Moves the loser's observations onto the winner. Slots in keyframes the
  /// winner already observes are unbound instead.
  void replace_map_point(MapPointId loser_id, MapPointId winner_id) {
    require(loser_id != winner_id, ErrorCode::kInvalidArgument, "cannot merge a map point with itself");
    MapPoint& loser = _live_point(loser_id);
    MapPoint& winner = _live_point(winner_id);
    require(loser.observations.size() <= winner.observations.size(), ErrorCode::kInvalidArgument,
            "merge direction: loser has more observations than winner");

    std::vector<std::pair<KeyFrameId, int>> moved(loser.observations.begin(), loser.observations.end());
    const int found = loser.found_count;
    const int visible = loser.visible_count;
    while (!loser.observations.empty()) {
      _detach(loser, loser.observations.begin());
    }
    loser.alive = false;

    for (const auto& [kf_id, idx] : moved) {
      if (!winner.observations.contains(kf_id)) {
        add_observation(winner_id, kf_id, idx);
      }
    }
    winner.found_count += found;
    winner.visible_count += visible;
    _refresh_descriptor(winner);
  }

  // -- covisibility ----------------------------------------------------------

  int covisibility_weight(KeyFrameId a, KeyFrameId b) const {
    auto it = _covis.find(a);
    if (it == _covis.end()) {
      return 0;
    }
    auto jt = it->second.find(b);
    return jt == it->second.end() ? 0 : jt->second;
  }

  /// All stored edges of a keyframe (weight >= 1).
  const std::map<KeyFrameId, int>& covisibility_edges(KeyFrameId id) const {
    static const std::map<KeyFrameId, int> kEmpty;
    auto it = _covis.find(id);
    return it == _covis.end() ? kEmpty : it->second;
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& [id, edges] : _covis) {
      n += edges.size();
    }
    return n / 2;
  }

  /// Top-n neighbors by descending weight, lower id first on ties.
  std::vector<KeyFrameId> covisible_neighbors(KeyFrameId id, std::size_t n) const {
    require(keyframe_alive(id), ErrorCode::kInvalidArgument, "keyframe " + std::to_string(id) + " is not alive");
    std::vector<std::pair<int, KeyFrameId>> ranked;
    for (const auto& [other, w] : covisibility_edges(id)) {
      if (w >= _config.min_covis_weight && keyframe_alive(other)) {
        ranked.emplace_back(w, other);
      }
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    std::vector<KeyFrameId> out;
    for (std::size_t i = 0; i < ranked.size() && i < n; ++i) {
      out.push_back(ranked[i].second);
    }
    return out;
  }

  // -- consistency -----------------------------------------------------------

  std::vector<AuditViolation> audit() const {
    std::vector<AuditViolation> out;

    // Bindings vs observation maps, in both directions.
    std::map<MapPointId, std::vector<KeyFrameId>> bound_by;
    for (const auto& [kf_id, kf] : _keyframes) {
      if (kf.bindings.size() != kf.keypoints.size()) {
        out.push_back({AuditViolation::Kind::kBinding, "keyframe " + std::to_string(kf_id) + " binding size"});
        continue;
      }
      for (std::size_t i = 0; i < kf.bindings.size(); ++i) {
        if (!kf.bindings[i]) {
          continue;
        }
        const MapPointId mp = *kf.bindings[i];
        if (!kf.alive) {
          out.push_back({AuditViolation::Kind::kDeadObserver,
                         "dead keyframe " + std::to_string(kf_id) + " still binds point " + std::to_string(mp)});
          continue;
        }
        if (!point_alive(mp)) {
          out.push_back({AuditViolation::Kind::kBinding,
                         "keyframe " + std::to_string(kf_id) + " binds dead point " + std::to_string(mp)});
          continue;
        }
        auto it = _points[static_cast<std::size_t>(mp)].observations.find(kf_id);
        if (it == _points[static_cast<std::size_t>(mp)].observations.end() || it->second != static_cast<int>(i)) {
          out.push_back({AuditViolation::Kind::kBinding, "keyframe " + std::to_string(kf_id) + " slot " +
                                                             std::to_string(i) + " not mirrored by point " +
                                                             std::to_string(mp)});
          continue;
        }
        bound_by[mp].push_back(kf_id);
      }
    }

    for (const MapPoint& mp : _points) {
      if (!mp.alive) {
        if (!mp.observations.empty()) {
          out.push_back({AuditViolation::Kind::kBinding, "dead point " + std::to_string(mp.id) + " has observations"});
        }
        continue;
      }
      std::vector<int> counts(mp.scale_counts.size(), 0);
      for (const auto& [kf_id, idx] : mp.observations) {
        auto kt = _keyframes.find(kf_id);
        if (kt == _keyframes.end() || !kt->second.alive) {
          out.push_back({AuditViolation::Kind::kDeadObserver,
                         "map point " + std::to_string(mp.id) + " observed by dead keyframe " + std::to_string(kf_id)});
          continue;
        }
        const KeyFrame& kf = kt->second;
        if (idx < 0 || static_cast<std::size_t>(idx) >= kf.bindings.size() || kf.bindings[static_cast<std::size_t>(idx)] != mp.id) {
          out.push_back({AuditViolation::Kind::kBinding, "map point " + std::to_string(mp.id) +
                                                             " observation in keyframe " + std::to_string(kf_id) +
                                                             " not mirrored by binding"});
          continue;
        }
        const int level = kf.keypoints[static_cast<std::size_t>(idx)].level;
        if (level >= 0 && static_cast<std::size_t>(level) < counts.size()) {
          counts[static_cast<std::size_t>(level)] += 1;
        }
      }
      int sum = 0;
      for (int c : mp.scale_counts) {
        sum += c;
      }
      if (counts != mp.scale_counts || sum != static_cast<int>(mp.observations.size())) {
        out.push_back({AuditViolation::Kind::kScaleCounts, "map point " + std::to_string(mp.id) + " scale_counts"});
      }
      if (!mp.observations.empty() && !_descriptor_is_representative(mp)) {
        out.push_back({AuditViolation::Kind::kDescriptor, "map point " + std::to_string(mp.id) + " rep_descriptor"});
      }
    }

    // Covisibility: pair counts from the keyframe-side bindings.
    std::map<std::pair<KeyFrameId, KeyFrameId>, int> expected;
    for (const auto& [mp, kfs] : bound_by) {
      for (std::size_t i = 0; i < kfs.size(); ++i) {
        for (std::size_t j = i + 1; j < kfs.size(); ++j) {
          expected[{std::min(kfs[i], kfs[j]), std::max(kfs[i], kfs[j])}] += 1;
        }
      }
    }
    std::map<std::pair<KeyFrameId, KeyFrameId>, std::pair<int, int>> stored;
    for (const auto& [a, edges] : _covis) {
      for (const auto& [b, w] : edges) {
        auto key = std::make_pair(std::min(a, b), std::max(a, b));
        auto& slot = stored[key];
        (a < b ? slot.first : slot.second) = w;
      }
    }
    for (const auto& [key, ws] : stored) {
      auto it = expected.find(key);
      const int want = it == expected.end() ? 0 : it->second;
      if (ws.first != want || ws.second != want) {
        out.push_back({AuditViolation::Kind::kCovisibility, "covisibility pair (" + std::to_string(key.first) + ", " +
                                                                std::to_string(key.second) + ")"});
      }
    }
    for (const auto& [key, want] : expected) {
      if (!stored.contains(key)) {
        out.push_back({AuditViolation::Kind::kCovisibility, "covisibility pair (" + std::to_string(key.first) + ", " +
                                                                std::to_string(key.second) + ")"});
      }
    }
    return out;
  }

  /// FNV-1a over every pose, position, binding and counter; equal digests
  /// mean bit-identical map state.
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [id, kf] : _keyframes) {
      mix(&id, sizeof id);
      mix(&kf.alive, sizeof kf.alive);
      mix(kf.pose.rotation.coeffs().data(), 4 * sizeof(double));
      mix(kf.pose.translation.data(), 3 * sizeof(double));
      for (const auto& b : kf.bindings) {
        const MapPointId v = b.value_or(-1);
        mix(&v, sizeof v);
      }
    }
    for (const MapPoint& mp : _points) {
      mix(&mp.id, sizeof mp.id);
      mix(&mp.alive, sizeof mp.alive);
      mix(mp.position.data(), 3 * sizeof(double));
      mix(mp.rep_descriptor.words.data(), sizeof mp.rep_descriptor.words);
      mix(&mp.found_count, sizeof mp.found_count);
      mix(&mp.visible_count, sizeof mp.visible_count);
      for (const auto& [kf, idx] : mp.observations) {
        mix(&kf, sizeof kf);
        mix(&idx, sizeof idx);
      }
      for (int c : mp.scale_counts) {
        mix(&c, sizeof c);
      }
    }
    return h;
  }

  // -- fault injection -------------------------------------------------------
  // These bypass every invariant; they exist so audit() can be tested.

  MapPoint& unchecked_point(MapPointId id) { return _points.at(static_cast<std::size_t>(id)); }

  void unchecked_set_edge(KeyFrameId a, KeyFrameId b, int weight) { _covis[a][b] = weight; }

  private:

  KeyFrame& _live_keyframe(KeyFrameId id) {
    auto it = _keyframes.find(id);
    require(it != _keyframes.end(), ErrorCode::kInvalidArgument, "unknown keyframe " + std::to_string(id));
    require(it->second.alive, ErrorCode::kInvalidState, "keyframe " + std::to_string(id) + " is dead");
    return it->second;
  }

  MapPoint& _live_point(MapPointId id) {
    require(id >= 0 && static_cast<std::size_t>(id) < _points.size(), ErrorCode::kInvalidArgument,
            "unknown map point " + std::to_string(id));
    MapPoint& mp = _points[static_cast<std::size_t>(id)];
    require(mp.alive, ErrorCode::kInvalidState, "map point " + std::to_string(id) + " is dead");
    return mp;
  }

  void _bump_edge(KeyFrameId a, KeyFrameId b, int delta) {
    auto update = [this](KeyFrameId x, KeyFrameId y, int d) {
      auto& edges = _covis[x];
      const int w = (edges[y] += d);
      if (w <= 0) {
        edges.erase(y);
      }
    };
    update(a, b, delta);
    update(b, a, delta);
  }

  void _detach(MapPoint& mp, std::map<KeyFrameId, int>::iterator it) {
    const KeyFrameId kf_id = it->first;
    const int idx = it->second;
    mp.observations.erase(it);
    for (const auto& [other, other_idx] : mp.observations) {
      _bump_edge(kf_id, other, -1);
    }
    KeyFrame& kf = _keyframes.at(kf_id);
    kf.bindings[static_cast<std::size_t>(idx)].reset();
    mp.scale_counts[static_cast<std::size_t>(kf.keypoints[static_cast<std::size_t>(idx)].level)] -= 1;
  }

  // Descriptor with the smallest median distance to the other observing
  // descriptors; the first minimum in (keyframe id, keypoint) order wins.
  BinaryDescriptor _representative(const MapPoint& mp) const {
    std::vector<const BinaryDescriptor*> descs;
    descs.reserve(mp.observations.size());
    for (const auto& [kf_id, idx] : mp.observations) {
      descs.push_back(&_keyframes.at(kf_id).descriptor_of(idx));
    }
    if (descs.size() <= 2) {
      return *descs.front();
    }
    int best_median = 1 << 30;
    std::size_t best = 0;
    std::vector<int> dists(descs.size() - 1);
    for (std::size_t i = 0; i < descs.size(); ++i) {
      std::size_t n = 0;
      for (std::size_t j = 0; j < descs.size(); ++j) {
        if (j != i) {
          dists[n++] = hamming(*descs[i], *descs[j]);
        }
      }
      std::sort(dists.begin(), dists.end());
      const int median = dists[(dists.size() - 1) / 2];
      if (median < best_median) {
        best_median = median;
        best = i;
      }
    }
    return *descs[best];
  }

  void _refresh_descriptor(MapPoint& mp) {
    if (!mp.observations.empty()) {
      mp.rep_descriptor = _representative(mp);
    }
  }

  bool _descriptor_is_representative(const MapPoint& mp) const { return _representative(mp) == mp.rep_descriptor; }

  MapConfig _config;
  std::map<KeyFrameId, KeyFrame> _keyframes;
  std::vector<MapPoint> _points;
  std::map<KeyFrameId, std::map<KeyFrameId, int>> _covis;
};

}  // namespace lmap
