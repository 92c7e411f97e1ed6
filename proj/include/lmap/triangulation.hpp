#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "lmap/device_store.hpp"
#include "lmap/geometry.hpp"
#include "lmap/map.hpp"
#include "lmap/parallel.hpp"

namespace lmap {

struct MatchingConfig {
  int match_max_distance {50};
  double chi2_epi {3.84};
  int level_window {1};
};

struct MatchCandidate {
  KeyFrameId neighbor_kf_id {0};
  int kp_index_current {0};
  int kp_index_neighbor {0};
  int distance {0};

  bool operator==(const MatchCandidate&) const = default;
};

/// Best neighbor keypoint for one current keypoint, before one-to-one
/// filtering.
struct RawMatch {
  int kp_index_neighbor {-1};
  int distance {std::numeric_limits<int>::max()};

  bool valid() const { return kp_index_neighbor >= 0; }
  bool operator==(const RawMatch&) const = default;
};

namespace detail {

inline bool better(int dist, int j, const RawMatch& best) {
  return dist < best.distance || (dist == best.distance && j < best.kp_index_neighbor);
}

inline bool passes_epipolar(const Mat3& f, const Vec2& pix_a, const Vec2& pix_b, double threshold) {
  const Vec3 line = f * pix_a.homogeneous();
  const double den = line.x() * line.x() + line.y() * line.y();
  if (!(den > 0.0)) {
    return false;
  }
  const double num = line.dot(pix_b.homogeneous());
  return num * num / den <= threshold;
}

// Keeps, for every neighbor keypoint claimed more than once, the claim with the
// lowest distance and then the lowest current index.
inline std::vector<MatchCandidate> one_to_one(const std::vector<RawMatch>& raw, KeyFrameId neighbor_id,
                                              std::size_t neighbor_size) {
  std::vector<int> owner(neighbor_size, -1);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw[i].valid()) {
      continue;
    }
    int& o = owner[static_cast<std::size_t>(raw[i].kp_index_neighbor)];
    if (o < 0 || raw[i].distance < raw[static_cast<std::size_t>(o)].distance) {
      o = static_cast<int>(i);
    }
  }
  std::vector<MatchCandidate> out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].valid() && owner[static_cast<std::size_t>(raw[i].kp_index_neighbor)] == static_cast<int>(i)) {
      out.push_back({neighbor_id, static_cast<int>(i), raw[i].kp_index_neighbor, raw[i].distance});
    }
  }
  return out;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Search for triangulation
// ----------------------------------------------------------------------------

/// Straightforward single-threaded scan over every (current, neighbor)
/// keypoint pair. Serves as the reference the parallel search must match.
inline std::vector<RawMatch> search_raw_reference(const KeyFrame& current, const KeyFrame& neighbor,
                                                  const MatchingConfig& cfg) {
  const Mat3 f = fundamental_matrix(current.pose, neighbor.pose, current.intrinsics, neighbor.intrinsics);
  std::vector<RawMatch> raw(current.keypoints.size());
  for (std::size_t i = 0; i < current.keypoints.size(); ++i) {
    if (current.bindings[i]) {
      continue;
    }
    const KeyPoint& kpi = current.keypoints[i];
    const BinaryDescriptor& di = current.descriptor_of(static_cast<int>(i));
    for (std::size_t j = 0; j < neighbor.keypoints.size(); ++j) {
      if (neighbor.bindings[j]) {
        continue;
      }
      const KeyPoint& kpj = neighbor.keypoints[j];
      if (std::abs(kpi.level - kpj.level) > cfg.level_window) {
        continue;
      }
      const int dist = hamming(di, neighbor.descriptor_of(static_cast<int>(j)));
      if (dist > cfg.match_max_distance) {
        continue;
      }
      if (!detail::passes_epipolar(f, kpi.pixel(), kpj.pixel(),
                                   cfg.chi2_epi * neighbor.intrinsics.level_sigma2(kpj.level))) {
        continue;
      }
      if (detail::better(dist, static_cast<int>(j), raw[i])) {
        raw[i] = {static_cast<int>(j), dist};
      }
    }
  }
  return raw;
}

/// Data-parallel search: one task per current keypoint, candidates drawn only
/// from the neighbor's level buckets inside the level window.
inline std::vector<RawMatch> search_raw(const KeyFrame& current, const KeyFrame& neighbor,
                                        const MatchingConfig& cfg, WorkerPool* pool) {
  const Mat3 f = fundamental_matrix(current.pose, neighbor.pose, current.intrinsics, neighbor.intrinsics);

  const int levels = neighbor.intrinsics.num_levels;
  std::vector<std::vector<int>> by_level(static_cast<std::size_t>(levels));
  for (std::size_t j = 0; j < neighbor.keypoints.size(); ++j) {
    if (!neighbor.bindings[j]) {
      by_level[static_cast<std::size_t>(neighbor.keypoints[j].level)].push_back(static_cast<int>(j));
    }
  }
  std::vector<double> thresholds(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    thresholds[static_cast<std::size_t>(l)] = cfg.chi2_epi * neighbor.intrinsics.level_sigma2(l);
  }

  std::vector<RawMatch> raw(current.keypoints.size());
  parallel_for(pool, current.keypoints.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (current.bindings[i]) {
        continue;
      }
      const KeyPoint& kpi = current.keypoints[i];
      const BinaryDescriptor& di = current.descriptor_of(static_cast<int>(i));
      const Vec3 line = f * kpi.pixel().homogeneous();
      const double den = line.x() * line.x() + line.y() * line.y();
      if (!(den > 0.0)) {
        continue;
      }
      RawMatch best;
      const int lo = std::max(0, kpi.level - cfg.level_window);
      const int hi = std::min(levels - 1, kpi.level + cfg.level_window);
      for (int l = lo; l <= hi; ++l) {
        for (int j : by_level[static_cast<std::size_t>(l)]) {
          const int dist = hamming(di, neighbor.descriptor_of(j));
          if (dist > cfg.match_max_distance || !detail::better(dist, j, best)) {
            continue;
          }
          const KeyPoint& kpj = neighbor.keypoints[static_cast<std::size_t>(j)];
          const double num = line.dot(kpj.pixel().homogeneous());
          if (num * num / den <= thresholds[static_cast<std::size_t>(l)]) {
            best = {j, dist};
          }
        }
      }
      raw[i] = best;
    }
  });
  return raw;
}

inline std::vector<MatchCandidate> search_for_triangulation_reference(const KeyFrame& current,
                                                                      const KeyFrame& neighbor,
                                                                      const MatchingConfig& cfg = {}) {
  return detail::one_to_one(search_raw_reference(current, neighbor, cfg), neighbor.id, neighbor.keypoints.size());
}

/// Matches unbound current keypoints against unbound neighbor keypoints
/// under descriptor, level and epipolar constraints; one-to-one, sorted by
/// current keypoint index. Identical output for any worker count.
inline std::vector<MatchCandidate> search_for_triangulation(const KeyFrame& current, const KeyFrame& neighbor,
                                                            const MatchingConfig& cfg = {},
                                                            WorkerPool* pool = nullptr) {
  return detail::one_to_one(search_raw(current, neighbor, cfg, pool), neighbor.id, neighbor.keypoints.size());
}

// ----------------------------------------------------------------------------
// Map-point creation
// ----------------------------------------------------------------------------

struct TriangulationConfig {
  MatchingConfig matching;
  CreationGateConfig gates;
  std::size_t neighbor_count {20};
};

struct CreationReport {
  std::vector<MapPointId> created;
  std::array<int, 5> gate_failures {0, 0, 0, 0, 0};
  int candidates {0};
  int stale_candidates {0};
  int degenerate_triangulations {0};
  int degenerate_neighbors {0};
  int conflicts {0};

  int failures(GateResult r) const { return gate_failures[static_cast<std::size_t>(r)]; }
};

/// Searches every neighbor against the map state at stage start, then
/// triangulates and gates candidates neighbor by neighbor. A candidate whose
/// current keypoint was bound by an earlier neighbor is skipped as stale.
inline CreationReport create_map_points(Map& map, DeviceStore* store, KeyFrameId current_id,
                                        const std::vector<KeyFrameId>& neighbors,
                                        const TriangulationConfig& cfg, WorkerPool* pool = nullptr,
                                        bool reference_search = false) {
  CreationReport report;
  require(map.keyframe_alive(current_id), ErrorCode::kInvalidArgument, "current keyframe is not alive");
  if (store != nullptr) {
    require(store->is_resident(current_id), ErrorCode::kInvalidState, "current keyframe is not resident");
    store->record_neighbor_access("triangulation", neighbors);
  }

  const KeyFrame& current = map.keyframe(current_id);
  std::vector<std::vector<MatchCandidate>> per_neighbor(neighbors.size());
  std::vector<char> degenerate(neighbors.size(), 0);
  for (std::size_t n = 0; n < neighbors.size(); ++n) {
    const KeyFrame& nb = map.keyframe(neighbors[n]);
    try {
      per_neighbor[n] = reference_search ? search_for_triangulation_reference(current, nb, cfg.matching)
                                         : search_for_triangulation(current, nb, cfg.matching, pool);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateGeometry) {
        throw;
      }
      degenerate[n] = 1;
    }
  }

  for (std::size_t n = 0; n < neighbors.size(); ++n) {
    if (degenerate[n]) {
      ++report.degenerate_neighbors;
      continue;
    }
    for (const MatchCandidate& c : per_neighbor[n]) {
      ++report.candidates;
      const KeyFrame& cur = map.keyframe(current_id);
      const KeyFrame& nb = map.keyframe(c.neighbor_kf_id);
      if (cur.bindings[static_cast<std::size_t>(c.kp_index_current)] ||
          nb.bindings[static_cast<std::size_t>(c.kp_index_neighbor)]) {
        ++report.stale_candidates;
        continue;
      }
      const KeyPoint& kpa = cur.keypoints[static_cast<std::size_t>(c.kp_index_current)];
      const KeyPoint& kpb = nb.keypoints[static_cast<std::size_t>(c.kp_index_neighbor)];
      Vec3 x;
      try {
        x = triangulate(cur.pose, nb.pose, cur.intrinsics, nb.intrinsics, kpa.pixel(), kpb.pixel());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegenerateGeometry) {
          throw;
        }
        ++report.degenerate_triangulations;
        continue;
      }
      const GateResult gate = check_creation_gates({cur.pose, cur.intrinsics, kpa.pixel(), kpa.level},
                                                   {nb.pose, nb.intrinsics, kpb.pixel(), kpb.level}, x, cfg.gates);
      if (gate != GateResult::kPass) {
        ++report.gate_failures[static_cast<std::size_t>(gate)];
        continue;
      }
      const std::pair<KeyFrameId, int> obs[] = {{current_id, c.kp_index_current},
                                                {c.neighbor_kf_id, c.kp_index_neighbor}};
      try {
        report.created.push_back(map.create_map_point(x, current_id, obs));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kConflict) {
          throw;
        }
        ++report.conflicts;
      }
    }
  }
  return report;
}

/// Uses the top-n covisible neighbors of the current keyframe.
inline CreationReport create_map_points(Map& map, DeviceStore* store, KeyFrameId current_id, std::size_t n,
                                        const TriangulationConfig& cfg, WorkerPool* pool = nullptr,
                                        bool reference_search = false) {
  return create_map_points(map, store, current_id, map.covisible_neighbors(current_id, n), cfg, pool,
                           reference_search);
}

}  // namespace lmap
