#pragma once

#include <cmath>
#include <set>
#include <vector>

#include <Eigen/Cholesky>

#include "lmap/fusion.hpp"
#include "lmap/local_ba.hpp"
#include "lmap/map.hpp"

namespace lmap {

// Stand-in for the tracking thread. A new keyframe arrives with a predicted
// pose; points of the reference keyframe's local map are matched into it and
// its pose is refined against those points alone, before local mapping
// touches it. Everything here is outside the timed local-mapping stages.
struct IntakeConfig {
  std::size_t local_neighbors {10};
  double search_radius {8.0};
  int match_max_distance {30};
  int level_window {1};
  int pose_iterations {10};
  double outlier_chi2 {5.991};
  double huber_delta {std::sqrt(5.991)};
};

struct IntakeReport {
  int visible {0};
  int associated {0};
  int outliers {0};
  bool pose_refined {false};
};

/// Motion-only refinement: Levenberg-Marquardt on the keyframe pose with
/// every bound point held fixed. Returns false when too few points are bound.
inline bool refine_keyframe_pose(Map& map, KeyFrameId id, const IntakeConfig& cfg = {}) {
  const KeyFrame& kf = map.keyframe(id);
  struct Obs {
    Vec3 point;
    Vec2 pixel;
    int level;
  };
  std::vector<Obs> obs;
  for (std::size_t i = 0; i < kf.bindings.size(); ++i) {
    if (kf.bindings[i] && map.point_alive(*kf.bindings[i])) {
      obs.push_back({map.point(*kf.bindings[i]).position, kf.keypoints[i].pixel(), kf.keypoints[i].level});
    }
  }
  if (obs.size() < 6) {
    return false;
  }
  auto cost_of = [&](const SE3Pose& pose) {
    double c = 0.0;
    for (const Obs& o : obs) {
      const FactorLinearization f = residual_and_jacobian(pose, kf.intrinsics, o.point, o.pixel, o.level, cfg.huber_delta);
      if (f.active) {
        c += huber_cost(f.residual.norm(), cfg.huber_delta);
      }
    }
    return c;
  };
  SE3Pose pose = kf.pose;
  double cost = cost_of(pose);
  double lambda = 1e-4;
  for (int it = 0; it < cfg.pose_iterations && cost > 1e-24; ++it) {
    Mat66 h = Mat66::Zero();
    Vec6 b = Vec6::Zero();
    for (const Obs& o : obs) {
      const FactorLinearization f = residual_and_jacobian(pose, kf.intrinsics, o.point, o.pixel, o.level, cfg.huber_delta);
      if (f.active) {
        h += f.weight * f.j_pose.transpose() * f.j_pose;
        b -= f.weight * f.j_pose.transpose() * f.residual;
      }
    }
    bool accepted = false;
    while (!accepted && lambda < 1e8) {
      Eigen::LLT<Mat66> llt(h + lambda * Mat66::Identity());
      if (llt.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const SE3Pose candidate = retract_right(pose, llt.solve(b));
      const double c = cost_of(candidate);
      if (c < cost) {
        const double rel = (cost - c) / cost;
        pose = candidate;
        cost = c;
        lambda = std::max(lambda / 2.0, 1e-12);
        accepted = true;
        if (rel < 1e-12) {
          it = cfg.pose_iterations;
        }
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {
      break;
    }
  }
  map.set_keyframe_pose(id, pose);
  return true;
}

/// Matches local-map points into the keyframe, refines its pose, then drops
/// associations whose refined reprojection error is an outlier.
inline IntakeReport intake_keyframe(Map& map, KeyFrameId id, KeyFrameId reference, const IntakeConfig& cfg = {}) {
  IntakeReport report;
  std::vector<KeyFrameId> local = map.covisible_neighbors(reference, cfg.local_neighbors);
  local.insert(local.begin(), reference);
  std::vector<MapPointId> points;
  std::set<MapPointId> seen;
  for (KeyFrameId k : local) {
    for (MapPointId p : map.points_in_keyframe(k)) {
      if (seen.insert(p).second) {
        points.push_back(p);
      }
    }
  }

  FusionConfig view;
  view.fuse_radius = cfg.search_radius;
  view.level_window = cfg.level_window;
  const KeyFrame& kf = map.keyframe(id);
  std::vector<MapPointId> associated;
  for (MapPointId p : points) {
    if (!map.point_alive(p)) {
      continue;
    }
    const MapPoint& mp = map.point(p);
    const auto proj = detail::project_for_fusion(map, mp, kf, view);
    if (!proj) {
      continue;
    }
    map.increase_visible(p);
    ++report.visible;
    const std::vector<int> nearby =
        kf.grid.query(kf.keypoints, proj->pixel.x(), proj->pixel.y(), proj->radius,
                      proj->predicted_level - cfg.level_window, proj->predicted_level + cfg.level_window);
    int best = -1;
    int best_dist = cfg.match_max_distance + 1;
    for (int idx : nearby) {
      if (kf.bindings[static_cast<std::size_t>(idx)]) {
        continue;
      }
      const int d = hamming(mp.rep_descriptor, kf.descriptor_of(idx));
      if (d < best_dist) {
        best_dist = d;
        best = idx;
      }
    }
    if (best >= 0) {
      map.add_observation(p, id, best);
      map.increase_found(p);
      associated.push_back(p);
    }
  }

  report.pose_refined = refine_keyframe_pose(map, id, cfg);
  if (report.pose_refined) {
    for (MapPointId p : associated) {
      if (!map.point_alive(p)) {
        continue;
      }
      const MapPoint& mp = map.point(p);
      const auto it = mp.observations.find(id);
      if (it == mp.observations.end()) {
        continue;
      }
      const KeyPoint& kp = kf.keypoints[static_cast<std::size_t>(it->second)];
      const FactorLinearization f = residual_and_jacobian(kf.pose, kf.intrinsics, mp.position, kp.pixel(), kp.level);
      if (!f.active || f.residual.squaredNorm() > cfg.outlier_chi2) {
        map.erase_observation(p, id);
        ++report.outliers;
      }
    }
  }
  report.associated = static_cast<int>(associated.size()) - report.outliers;
  return report;
}

}  // namespace lmap
