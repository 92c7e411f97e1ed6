#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <vector>

#include "lmap/device_store.hpp"
#include "lmap/map.hpp"
#include "lmap/parallel.hpp"

namespace lmap {

struct FusionConfig {
  std::size_t first_order {20};
  std::size_t second_order {5};
  double fuse_radius {3.0};
  double min_view_cosine {0.5};
  double distance_slack {1.2};
  int match_max_distance {50};
  int level_window {1};
  std::uint64_t map_point_record_bytes {64};
  // Passes repeat until nothing changes; merges can expose new hits.
  int max_rounds {8};
};

enum class FuseKind { kMerge, kAddObservation };

struct FuseAction {
  KeyFrameId target_kf_id {0};
  MapPointId mp_id_projected {0};
  int kp_index_hit {0};
  std::optional<MapPointId> existing_mp_id;
  FuseKind kind {FuseKind::kAddObservation};

  bool operator==(const FuseAction&) const = default;
};

struct FusionCounts {
  int merged {0};
  int observations_added {0};
  int stale {0};

  FusionCounts& operator+=(const FusionCounts& o) {
    merged += o.merged;
    observations_added += o.observations_added;
    stale += o.stale;
    return *this;
  }
};

/// First-order neighbors in weight order, then each one's top second-order
/// neighbors (current keyframe excluded before ranking) in discovery order.
inline std::vector<KeyFrameId> collect_fusion_targets(const Map& map, KeyFrameId current, std::size_t n1,
                                                      std::size_t n2) {
  require(map.keyframe_alive(current), ErrorCode::kInvalidArgument, "current keyframe is not alive");
  std::vector<KeyFrameId> out = map.covisible_neighbors(current, n1);
  std::set<KeyFrameId> seen(out.begin(), out.end());
  seen.insert(current);
  const std::size_t first = out.size();
  for (std::size_t i = 0; i < first; ++i) {
    std::vector<KeyFrameId> second = map.covisible_neighbors(out[i], n2 + 1);
    std::erase(second, current);
    if (second.size() > n2) {
      second.resize(n2);
    }
    for (KeyFrameId id : second) {
      if (seen.insert(id).second) {
        out.push_back(id);
      }
    }
  }
  return out;
}

namespace detail {

// Scale-invariance band and mean viewing direction implied by a point's
// observations. A feature seen at distance d on level L would appear on
// level 0 at d / s^L and on the coarsest level at d * s^(n-1-L).
struct PointViewModel {
  Vec3 normal {Vec3::Zero()};
  double level0_distance {0.0};
  double max_distance {0.0};
};

inline PointViewModel view_model(const Map& map, const MapPoint& mp) {
  PointViewModel m;
  m.level0_distance = std::numeric_limits<double>::infinity();
  for (const auto& [kf_id, idx] : mp.observations) {
    const KeyFrame& kf = map.keyframe(kf_id);
    const Vec3 ray = mp.position - kf.pose.center();
    const double d = ray.norm();
    if (d <= 0.0) {
      continue;
    }
    m.normal += ray / d;
    const int level = kf.keypoints[static_cast<std::size_t>(idx)].level;
    const double s = kf.intrinsics.scale_factor;
    m.level0_distance = std::min(m.level0_distance, d / std::pow(s, level));
    m.max_distance = std::max(m.max_distance, d * std::pow(s, kf.intrinsics.num_levels - 1 - level));
  }
  const double n = m.normal.norm();
  if (n > 0.0) {
    m.normal /= n;
  }
  return m;
}

struct Projection {
  Vec2 pixel;
  int predicted_level {0};
  double radius {0.0};
};

inline std::optional<Projection> project_for_fusion(const Map& map, const MapPoint& mp, const KeyFrame& target,
                                                    const FusionConfig& cfg) {
  const Vec3 pc = target.pose.transform(mp.position);
  const std::optional<Vec2> px = target.intrinsics.project(pc);
  if (!px) {
    return std::nullopt;
  }
  const PointViewModel vm = view_model(map, mp);
  if (!std::isfinite(vm.level0_distance)) {
    return std::nullopt;
  }
  const Vec3 ray = mp.position - target.pose.center();
  const double dist = ray.norm();
  if (dist < vm.level0_distance / cfg.distance_slack || dist > vm.max_distance * cfg.distance_slack) {
    return std::nullopt;
  }
  if (ray.dot(vm.normal) < cfg.min_view_cosine * dist) {
    return std::nullopt;
  }
  const double s = target.intrinsics.scale_factor;
  int level = static_cast<int>(std::floor(std::log(dist / vm.level0_distance) / std::log(s)));
  level = std::clamp(level, 0, target.intrinsics.num_levels - 1);
  return Projection{*px, level, cfg.fuse_radius * std::pow(s, level)};
}

inline std::optional<FuseAction> make_action(const MapPoint& mp, const KeyFrame& target, int best) {
  if (best < 0) {
    return std::nullopt;
  }
  const auto& binding = target.bindings[static_cast<std::size_t>(best)];
  if (binding) {
    if (*binding == mp.id) {
      return std::nullopt;
    }
    return FuseAction{target.id, mp.id, best, *binding, FuseKind::kMerge};
  }
  return FuseAction{target.id, mp.id, best, std::nullopt, FuseKind::kAddObservation};
}

inline std::optional<FuseAction> fuse_one(const Map& map, MapPointId id, const KeyFrame& target,
                                          const FusionConfig& cfg) {
  if (!map.point_alive(id)) {
    return std::nullopt;
  }
  const MapPoint& mp = map.point(id);
  if (mp.observations.contains(target.id)) {
    return std::nullopt;
  }
  const std::optional<Projection> proj = project_for_fusion(map, mp, target, cfg);
  if (!proj) {
    return std::nullopt;
  }
  const std::vector<int> nearby =
      target.grid.query(target.keypoints, proj->pixel.x(), proj->pixel.y(), proj->radius,
                        proj->predicted_level - cfg.level_window, proj->predicted_level + cfg.level_window);
  int best = -1;
  int best_dist = cfg.match_max_distance + 1;
  for (int idx : nearby) {
    const int d = hamming(mp.rep_descriptor, target.descriptor_of(idx));
    if (d < best_dist) {
      best_dist = d;
      best = idx;
    }
  }
  return make_action(mp, target, best);
}

// Same decision as fuse_one with a full scan instead of the grid.
inline std::optional<FuseAction> fuse_one_reference(const Map& map, MapPointId id, const KeyFrame& target,
                                                    const FusionConfig& cfg) {
  if (!map.point_alive(id)) {
    return std::nullopt;
  }
  const MapPoint& mp = map.point(id);
  if (mp.observations.contains(target.id)) {
    return std::nullopt;
  }
  const std::optional<Projection> proj = project_for_fusion(map, mp, target, cfg);
  if (!proj) {
    return std::nullopt;
  }
  int best = -1;
  int best_dist = cfg.match_max_distance + 1;
  for (std::size_t idx = 0; idx < target.keypoints.size(); ++idx) {
    const KeyPoint& kp = target.keypoints[idx];
    if (std::abs(kp.level - proj->predicted_level) > cfg.level_window) {
      continue;
    }
    const double du = kp.u - proj->pixel.x();
    const double dv = kp.v - proj->pixel.y();
    if (du * du + dv * dv > proj->radius * proj->radius) {
      continue;
    }
    const int d = hamming(mp.rep_descriptor, target.descriptor_of(static_cast<int>(idx)));
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(idx);
    }
  }
  return make_action(mp, target, best);
}

}  // namespace detail

/// Projects each point into the target keyframe and proposes a merge (hit
/// keypoint bound to another point) or an added observation (hit keypoint
/// unbound). Read-only; results follow input order for any worker count.
inline std::vector<FuseAction> fuse_pass(const Map& map, std::span<const MapPointId> points, KeyFrameId target_id,
                                         const FusionConfig& cfg = {}, WorkerPool* pool = nullptr) {
  const KeyFrame& target = map.keyframe(target_id);
  std::vector<std::optional<FuseAction>> slots(points.size());
  parallel_for(pool, points.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      slots[k] = detail::fuse_one(map, points[k], target, cfg);
    }
  });
  std::vector<FuseAction> out;
  for (auto& s : slots) {
    if (s) {
      out.push_back(*s);
    }
  }
  return out;
}

inline std::vector<FuseAction> fuse_pass_reference(const Map& map, std::span<const MapPointId> points,
                                                   KeyFrameId target_id, const FusionConfig& cfg = {}) {
  const KeyFrame& target = map.keyframe(target_id);
  std::vector<FuseAction> out;
  for (MapPointId id : points) {
    if (auto a = detail::fuse_one_reference(map, id, target, cfg)) {
      out.push_back(*a);
    }
  }
  return out;
}

/// Applies actions in order. The point with fewer observations loses a
/// merge (higher id on ties). Actions invalidated by earlier ones in the
/// same batch are counted as stale.
inline FusionCounts apply_fusion(Map& map, std::span<const FuseAction> actions) {
  FusionCounts counts;
  for (const FuseAction& a : actions) {
    if (!map.keyframe_alive(a.target_kf_id) || !map.point_alive(a.mp_id_projected)) {
      ++counts.stale;
      continue;
    }
    const KeyFrame& target = map.keyframe(a.target_kf_id);
    const auto& binding = target.bindings[static_cast<std::size_t>(a.kp_index_hit)];
    if (a.kind == FuseKind::kAddObservation) {
      if (binding || map.point(a.mp_id_projected).observations.contains(a.target_kf_id)) {
        ++counts.stale;
        continue;
      }
      map.add_observation(a.mp_id_projected, a.target_kf_id, a.kp_index_hit);
      ++counts.observations_added;
      continue;
    }
    const MapPointId other = a.existing_mp_id.value_or(-1);
    if (!map.point_alive(other) || other == a.mp_id_projected || binding != other) {
      ++counts.stale;
      continue;
    }
    const std::size_t n_proj = map.point(a.mp_id_projected).observations.size();
    const std::size_t n_other = map.point(other).observations.size();
    MapPointId winner = a.mp_id_projected;
    MapPointId loser = other;
    if (n_other > n_proj || (n_other == n_proj && other < a.mp_id_projected)) {
      std::swap(winner, loser);
    }
    map.replace_map_point(loser, winner);
    ++counts.merged;
  }
  return counts;
}

/// Forward pass (current keyframe's points into every target), then
/// reverse pass (targets' points into the current keyframe).
namespace detail {

inline FusionCounts fusion_round(Map& map, DeviceStore* store, KeyFrameId current_id, const FusionConfig& cfg,
                                 WorkerPool* pool, bool reference) {
  const std::vector<KeyFrameId> targets = collect_fusion_targets(map, current_id, cfg.first_order, cfg.second_order);
  const std::vector<MapPointId> own = map.points_in_keyframe(current_id);
  if (store != nullptr) {
    require(store->is_resident(current_id), ErrorCode::kInvalidState, "current keyframe is not resident");
    store->record_neighbor_access("fusion", targets);
    store->record_small_transfer("fusion", own.size() * cfg.map_point_record_bytes);
  }

  FusionCounts counts;
  std::vector<FuseAction> forward;
  if (reference) {
    for (KeyFrameId t : targets) {
      auto actions = fuse_pass_reference(map, own, t, cfg);
      forward.insert(forward.end(), actions.begin(), actions.end());
    }
  } else {
    // One task per (target, point) pair against the same snapshot.
    std::vector<const KeyFrame*> target_kfs;
    for (KeyFrameId t : targets) {
      target_kfs.push_back(&map.keyframe(t));
    }
    std::vector<std::optional<FuseAction>> slots(targets.size() * own.size());
    parallel_for(pool, slots.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t s = begin; s < end; ++s) {
        slots[s] = detail::fuse_one(map, own[s % own.size()], *target_kfs[s / own.size()], cfg);
      }
    });
    for (auto& s : slots) {
      if (s) {
        forward.push_back(*s);
      }
    }
  }
  counts += apply_fusion(map, forward);

  std::vector<MapPointId> theirs;
  std::set<MapPointId> seen;
  for (KeyFrameId t : targets) {
    if (!map.keyframe_alive(t)) {
      continue;
    }
    for (MapPointId id : map.points_in_keyframe(t)) {
      if (seen.insert(id).second) {
        theirs.push_back(id);
      }
    }
  }
  if (store != nullptr) {
    store->record_small_transfer("fusion", theirs.size() * cfg.map_point_record_bytes);
  }
  const std::vector<FuseAction> reverse = reference ? fuse_pass_reference(map, theirs, current_id, cfg)
                                                    : fuse_pass(map, theirs, current_id, cfg, pool);
  counts += apply_fusion(map, reverse);
  return counts;
}

}  // namespace detail

inline FusionCounts run_fusion(Map& map, DeviceStore* store, KeyFrameId current_id, const FusionConfig& cfg = {},
                               WorkerPool* pool = nullptr, bool reference = false) {
  FusionCounts counts;
  for (int round = 0; round < std::max(1, cfg.max_rounds); ++round) {
    const FusionCounts r = detail::fusion_round(map, store, current_id, cfg, pool, reference);
    counts += r;
    if (r.merged == 0 && r.observations_added == 0) {
      break;
    }
  }
  return counts;
}

}  // namespace lmap
