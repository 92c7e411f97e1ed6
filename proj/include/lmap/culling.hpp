#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "lmap/device_store.hpp"
#include "lmap/map.hpp"

namespace lmap {

struct CullingConfig {
  double found_ratio_min {0.25};
  int probation_kfs {3};
  int min_observations {3};
  int redundant_observers {3};
  double redundant_fraction {0.9};
  int scale_tolerance_levels {0};
};

// ----------------------------------------------------------------------------
// Recent map points
// ----------------------------------------------------------------------------

struct RecentCullResult {
  std::vector<MapPointId> removed;
  std::vector<MapPointId> graduated;
  std::vector<MapPointId> still_recent;
};

/// Probation check for freshly created points. Age is counted in keyframe
/// ids since the point's first keyframe. Dead ids are dropped silently.
inline RecentCullResult cull_recent_map_points(Map& map, const std::vector<MapPointId>& recent,
                                               KeyFrameId current_kf_id, const CullingConfig& cfg = {}) {
  RecentCullResult out;
  for (MapPointId id : recent) {
    if (!map.point_alive(id)) {
      continue;
    }
    const MapPoint& mp = map.point(id);
    const KeyFrameId age = current_kf_id - mp.first_kf_id;
    const bool low_ratio = mp.found_ratio() < cfg.found_ratio_min;
    const bool thin = age >= cfg.probation_kfs && static_cast<int>(mp.observations.size()) < cfg.min_observations;
    if (low_ratio || thin) {
      map.kill_map_point(id);
      out.removed.push_back(id);
    } else if (age >= cfg.probation_kfs) {
      out.graduated.push_back(id);
    } else {
      out.still_recent.push_back(id);
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Keyframe redundancy
// ----------------------------------------------------------------------------

struct RedundancyResult {
  bool redundant {false};
  int redundant_points {0};
  int considered_points {0};

  bool operator==(const RedundancyResult&) const = default;
};

namespace detail {

inline RedundancyResult redundancy_verdict(int redundant, int considered, double fraction) {
  return {considered > 0 && redundant >= fraction * considered - 1e-9, redundant, considered};
}

}  // namespace detail

/// Walks each point's full observation list and looks up every observing
/// keyframe's level.
inline RedundancyResult is_redundant_baseline(const Map& map, KeyFrameId kf_id, const CullingConfig& cfg = {}) {
  const KeyFrame& kf = map.keyframe(kf_id);
  int redundant = 0;
  int considered = 0;
  for (std::size_t i = 0; i < kf.bindings.size(); ++i) {
    if (!kf.bindings[i] || !map.point_alive(*kf.bindings[i])) {
      continue;
    }
    ++considered;
    const int level = kf.keypoints[i].level + cfg.scale_tolerance_levels;
    int others = 0;
    for (const auto& [other_id, idx] : map.point(*kf.bindings[i]).observations) {
      if (other_id == kf_id) {
        continue;
      }
      const KeyFrame& other = map.keyframe(other_id);
      if (other.keypoints[static_cast<std::size_t>(idx)].level <= level) {
        if (++others >= cfg.redundant_observers) {
          break;
        }
      }
    }
    if (others >= cfg.redundant_observers) {
      ++redundant;
    }
  }
  return detail::redundancy_verdict(redundant, considered, cfg.redundant_fraction);
}

/// Same verdict from the per-scale observation counters: a prefix sum up to
/// the keyframe's level, minus its own observation.
inline RedundancyResult is_redundant_fast(const Map& map, KeyFrameId kf_id, const CullingConfig& cfg = {}) {
  const KeyFrame& kf = map.keyframe(kf_id);
  int redundant = 0;
  int considered = 0;
  for (std::size_t i = 0; i < kf.bindings.size(); ++i) {
    if (!kf.bindings[i] || !map.point_alive(*kf.bindings[i])) {
      continue;
    }
    ++considered;
    const std::vector<int>& counts = map.point(*kf.bindings[i]).scale_counts;
    const int top = std::min(kf.keypoints[i].level + cfg.scale_tolerance_levels, static_cast<int>(counts.size()) - 1);
    int sum = 0;
    for (int l = 0; l <= top; ++l) {
      sum += counts[static_cast<std::size_t>(l)];
    }
    if (sum - 1 >= cfg.redundant_observers) {
      ++redundant;
    }
  }
  return detail::redundancy_verdict(redundant, considered, cfg.redundant_fraction);
}

/// Evaluates candidates in id order and removes each redundant one at once,
/// so later candidates see the post-removal map. Keyframe 0 is never removed.
/// `before_remove`, when set, sees each keyframe while its links still exist.
inline std::vector<KeyFrameId> cull_keyframes(Map& map, DeviceStore* store, std::vector<KeyFrameId> candidates,
                                              bool fast, const CullingConfig& cfg = {},
                                              const std::function<void(KeyFrameId)>& before_remove = {}) {
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::vector<KeyFrameId> removed;
  for (KeyFrameId id : candidates) {
    if (id == 0 || !map.keyframe_alive(id)) {
      continue;
    }
    const RedundancyResult r = fast ? is_redundant_fast(map, id, cfg) : is_redundant_baseline(map, id, cfg);
    if (!r.redundant) {
      continue;
    }
    if (before_remove) {
      before_remove(id);
    }
    map.remove_keyframe(id);
    if (store != nullptr && store->is_resident(id)) {
      store->evict_keyframe(id);
    }
    removed.push_back(id);
  }
  return removed;
}

}  // namespace lmap
