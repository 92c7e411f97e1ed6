#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lmap/culling.hpp"
#include "lmap/device_store.hpp"
#include "lmap/fusion.hpp"
#include "lmap/intake.hpp"
#include "lmap/local_ba.hpp"
#include "lmap/map.hpp"
#include "lmap/parallel.hpp"
#include "lmap/synth.hpp"
#include "lmap/trajectory.hpp"
#include "lmap/triangulation.hpp"

namespace lmap {

enum class Mode { kBaseline, kOptimized };

constexpr std::string_view to_string(Mode m) { return m == Mode::kBaseline ? "baseline" : "optimized"; }

inline Mode mode_from_string(std::string_view s) {
  if (s == "baseline") return Mode::kBaseline;
  if (s == "optimized") return Mode::kOptimized;
  fail(ErrorCode::kInvalidArgument, "unknown mode '" + std::string(s) + "'");
}

// Stage order inside process_one.
enum class Stage { kUpload, kRecentCull, kTriangulation, kFusion, kLba, kKfCull };
inline constexpr std::size_t kStageCount = 6;
inline constexpr std::array<std::string_view, kStageCount> kStageNames {
    "upload", "recent_mp_cull", "triangulation", "fusion", "lba", "kf_cull"};

struct PipelineConfig {
  Mode mode {Mode::kOptimized};
  std::size_t worker_count {4};
  std::size_t queue_capacity {3};

  MapConfig map;
  DeviceStoreConfig device;
  IntakeConfig intake;
  TriangulationConfig triangulation;
  FusionConfig fusion;
  BAConfig ba;
  CullingConfig culling;

  bool force_skip_lba {false};

  // Stress feeding: keyframes arrive every stress_period_ms on a virtual
  // clock that advances by the measured stage times scaled by
  // stage_delay_multipliers. A non-positive period is calibrated to
  // stress_load times the mean cost of the first calibration keyframes.
  bool stress {false};
  double stress_period_ms {0.0};
  double stress_load {2.0};
  std::size_t stress_calibration_kfs {3};
  std::array<double, kStageCount> stage_delay_multipliers {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  std::size_t effective_workers() const { return mode == Mode::kBaseline ? 1 : std::max<std::size_t>(1, worker_count); }
};

struct StageTimings {
  KeyFrameId kf_id {0};
  std::array<double, kStageCount> stage_ms {0, 0, 0, 0, 0, 0};
  double total_ms {0.0};
  double intake_ms {0.0};  // tracking stand-in; not part of total
  std::size_t keyframes {0};
  std::size_t points {0};
  std::size_t queue_depth {0};
  bool lba_ran {false};
  bool culling_ran {false};

  double operator[](Stage s) const { return stage_ms[static_cast<std::size_t>(s)]; }
};

struct SkipStats {
  int lba_skips {0};
  int culling_skips {0};
  int forced_lba_skips {0};
  int dropped {0};
  std::vector<std::size_t> queue_depth_trace;
};

struct StageError {
  KeyFrameId kf_id {0};
  std::string stage;
  std::string message;
};

struct StageCounters {
  int intake_associations {0};
  int points_created {0};
  int recent_removed {0};
  int fusion_merged {0};
  int fusion_observations_added {0};
  int lba_runs {0};
  int lba_iterations {0};
  int keyframes_culled {0};
};

struct EstimatedPose {
  KeyFrameId kf_id {0};
  double timestamp {0.0};
  SE3Pose pose;  // world-to-camera
};

enum class EnqueueResult { kAccepted, kDropped };

// LocalMapper
//
// Owns the keyframe queue, the map and the device store. process_one runs
// the local-mapping stages for the oldest queued keyframe on the calling
// thread; data-parallel sections go to the worker pool in optimized mode.
class LocalMapper {

  public:

  explicit LocalMapper(PipelineConfig config = {})
      : _config{std::move(config)}, _map{_config.map}, _store{_config.device} {
    if (_config.mode == Mode::kOptimized && _config.effective_workers() > 1) {
      _pool = std::make_unique<WorkerPool>(_config.effective_workers());
    }
  }

  const PipelineConfig& config() const noexcept { return _config; }
  const Map& map() const noexcept { return _map; }
  Map& map() noexcept { return _map; }
  const DeviceStore& store() const noexcept { return _store; }
  const SkipStats& skip_stats() const noexcept { return _skips; }
  const std::vector<StageTimings>& timings() const noexcept { return _timings; }
  const std::vector<StageError>& errors() const noexcept { return _errors; }
  const StageCounters& counters() const noexcept { return _counters; }
  const std::vector<MapPointId>& recent_points() const noexcept { return _recent; }
  std::size_t queue_depth() const noexcept { return _queue.size(); }

  /// Called after every timed stage with the stage's wall time in ms.
  void set_stage_hook(std::function<void(Stage, double)> hook) { _hook = std::move(hook); }

  EnqueueResult enqueue_keyframe(KeyFrame kf) {
    if (_queue.size() >= _config.queue_capacity) {
      ++_skips.dropped;
      return EnqueueResult::kDropped;
    }
    _queue.push_back(std::move(kf));
    return EnqueueResult::kAccepted;
  }

  StageTimings process_one() {
    require(!_queue.empty(), ErrorCode::kInvalidState, "keyframe queue is empty");
    KeyFrame kf = std::move(_queue.front());
    _queue.pop_front();

    StageTimings t;
    t.kf_id = kf.id;
    const KeyFrameId id = kf.id;
    const bool optimized = _config.mode == Mode::kOptimized;
    WorkerPool* pool = _pool.get();
    const auto start = Clock::now();

    // (1) insert + upload
    bool inserted = _timed(t, Stage::kUpload, id, [&] {
      _map.insert_keyframe(std::move(kf));
      _store.upload_keyframe(_map.keyframe(id));
    });
    if (!inserted || !_map.keyframe_alive(id)) {
      t.total_ms = _ms_since(start);
      _finish(t);
      return t;
    }

    const auto intake_start = Clock::now();
    if (auto ref = _reference_keyframe()) {
      const IntakeReport r = intake_keyframe(_map, id, *ref, _config.intake);
      _counters.intake_associations += r.associated;
    }
    t.intake_ms = _ms_since(intake_start);

    // (2) recent map-point culling
    _timed(t, Stage::kRecentCull, id, [&] {
      RecentCullResult r = cull_recent_map_points(_map, _recent, id, _config.culling);
      _counters.recent_removed += static_cast<int>(r.removed.size());
      _recent = std::move(r.still_recent);
    });

    // (3) triangulation
    _timed(t, Stage::kTriangulation, id, [&] {
      std::vector<KeyFrameId> neighbors = _map.covisible_neighbors(id, _config.triangulation.neighbor_count);
      if (neighbors.empty()) {
        if (auto ref = _reference_keyframe()) {
          neighbors.push_back(*ref);
        }
      }
      CreationReport r = create_map_points(_map, &_store, id, neighbors, _config.triangulation, pool, !optimized);
      _counters.points_created += static_cast<int>(r.created.size());
      _recent.insert(_recent.end(), r.created.begin(), r.created.end());
    });

    // (4) fusion, never skipped
    _timed(t, Stage::kFusion, id, [&] {
      FusionCounts c = run_fusion(_map, &_store, id, _config.fusion, pool, !optimized);
      _counters.fusion_merged += c.merged;
      _counters.fusion_observations_added += c.observations_added;
    });

    // (5) local BA unless backlog
    const std::size_t depth_lba = _queue.size();
    if (_config.force_skip_lba) {
      ++_skips.forced_lba_skips;
    } else if (depth_lba > 0) {
      ++_skips.lba_skips;
    } else if (_map.live_keyframe_count() >= 2) {
      t.lba_ran = _timed(t, Stage::kLba, id, [&] {
        const BAWindow w = build_local_window(_map, id, _config.ba);
        const BAReport r = lm_optimize(_map, w, _config.ba, pool);
        ++_counters.lba_runs;
        _counters.lba_iterations += r.iterations;
      });
    }

    // (6) keyframe culling unless backlog
    if (_queue.size() > 0) {
      ++_skips.culling_skips;
    } else {
      t.culling_ran = _timed(t, Stage::kKfCull, id, [&] {
        std::vector<KeyFrameId> candidates;
        const std::size_t n = _config.ba.window_size > 0 ? _config.ba.window_size - 1 : 0;
        for (KeyFrameId c : _map.covisible_neighbors(id, n)) {
          if (c != 0) {
            candidates.push_back(c);
          }
        }
        const auto removed = cull_keyframes(_map, &_store, candidates, optimized, _config.culling,
                                            [&](KeyFrameId gone) { _anchor_culled(gone); });
        _counters.keyframes_culled += static_cast<int>(removed.size());
      });
    }

    t.total_ms = _ms_since(start);
    _processed.push_back(id);
    _finish(t);
    return t;
  }

  /// Every processed keyframe in id order. A culled keyframe follows the
  /// keyframe it was anchored to when it was removed.
  std::vector<EstimatedPose> trajectory() const {
    std::vector<EstimatedPose> out;
    for (const auto& [id, kf] : _map.keyframes()) {
      out.push_back({id, kf.timestamp, _resolved_pose(id)});
    }
    return out;
  }

  private:

  using Clock = std::chrono::steady_clock;

  static double _ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  }

  template <typename F>
  bool _timed(StageTimings& t, Stage stage, KeyFrameId id, F&& body) {
    const auto t0 = Clock::now();
    bool ok = true;
    try {
      body();
    } catch (const Error& e) {
      _errors.push_back({id, std::string(kStageNames[static_cast<std::size_t>(stage)]), e.what()});
      ok = false;
    }
    const double ms = _ms_since(t0);
    t.stage_ms[static_cast<std::size_t>(stage)] = ms;
    if (_hook) {
      _hook(stage, ms);
    }
    return ok;
  }

  void _finish(StageTimings& t) {
    t.keyframes = _map.live_keyframe_count();
    t.points = _map.live_point_count();
    t.queue_depth = _queue.size();
    _skips.queue_depth_trace.push_back(_queue.size());
    _timings.push_back(t);
  }

  struct Anchor {
    KeyFrameId parent;
    SE3Pose relative;  // T_child = relative * T_parent
  };

  void _anchor_culled(KeyFrameId id) {
    const auto best = _map.covisible_neighbors(id, 1);
    if (best.empty()) {
      return;
    }
    const SE3Pose& child = _map.keyframe(id).pose;
    const SE3Pose& parent = _map.keyframe(best.front()).pose;
    _anchors[id] = {best.front(), compose(child, parent.inverse())};
  }

  SE3Pose _resolved_pose(KeyFrameId id) const {
    const auto it = _anchors.find(id);
    if (it == _anchors.end()) {
      return _map.keyframe(id).pose;
    }
    return compose(it->second.relative, _resolved_pose(it->second.parent));
  }

  // Most recently processed keyframe that is still alive.
  std::optional<KeyFrameId> _reference_keyframe() const {
    for (auto it = _processed.rbegin(); it != _processed.rend(); ++it) {
      if (_map.keyframe_alive(*it)) {
        return *it;
      }
    }
    return std::nullopt;
  }

  PipelineConfig _config;
  Map _map;
  DeviceStore _store;
  std::unique_ptr<WorkerPool> _pool;
  std::deque<KeyFrame> _queue;
  std::vector<MapPointId> _recent;
  std::vector<KeyFrameId> _processed;
  SkipStats _skips;
  std::vector<StageTimings> _timings;
  std::vector<StageError> _errors;
  StageCounters _counters;
  std::function<void(Stage, double)> _hook;
  std::map<KeyFrameId, Anchor> _anchors;
};

// ----------------------------------------------------------------------------
// run_sequence
// ----------------------------------------------------------------------------

struct RunResult {
  PipelineConfig config;
  std::vector<EstimatedPose> trajectory;
  std::vector<StageTimings> timings;
  SkipStats skips;
  TransferLedger ledger;
  StageCounters counters;
  std::vector<StageError> errors;
  std::size_t sequence_keyframes {0};
  std::size_t processed {0};
  double stress_period_ms {0.0};
  std::uint64_t map_digest {0};
  std::size_t audit_violations {0};
  std::shared_ptr<Map> map;
};

inline Trajectory estimated_trajectory(const std::vector<EstimatedPose>& poses) {
  Trajectory out;
  for (const EstimatedPose& p : poses) {
    out.push_back(stamped_from_world_to_camera(p.timestamp, p.pose));
  }
  return out;
}

/// Ground truth for the keyframes present in the estimate, same order.
inline Trajectory ground_truth_for(const Sequence& seq, const std::vector<EstimatedPose>& poses) {
  std::map<KeyFrameId, std::size_t> index;
  for (std::size_t i = 0; i < seq.ground_truth.size(); ++i) {
    index[seq.ground_truth[i].id] = i;
  }
  Trajectory out;
  for (const EstimatedPose& p : poses) {
    auto it = index.find(p.kf_id);
    require(it != index.end(), ErrorCode::kInvalidArgument, "no ground truth for keyframe " + std::to_string(p.kf_id));
    out.push_back(stamped_from_world_to_camera(p.timestamp, seq.ground_truth[it->second].pose));
  }
  return out;
}

/// ATE of a run against the sequence's ground truth.
inline double run_ate(const Sequence& seq, const RunResult& r, bool align_scale = false) {
  return ate_rmse(estimated_trajectory(r.trajectory), ground_truth_for(seq, r.trajectory), align_scale);
}

/// Feeds the sequence through a LocalMapper. Without stress each keyframe is
/// enqueued and processed before the next one arrives. With stress the
/// arrival schedule runs on a virtual clock driven by measured stage times,
/// so backlog (and therefore skipping and dropping) follows processing cost.
inline RunResult run_sequence(const Sequence& seq, const PipelineConfig& config) {
  LocalMapper mapper(config);
  RunResult out;
  out.config = config;
  out.sequence_keyframes = seq.keyframes.size();
  const std::size_t n = seq.keyframes.size();

  if (!config.stress) {
    for (std::size_t k = 0; k < n; ++k) {
      mapper.enqueue_keyframe(seq.to_keyframe(k));
      mapper.process_one();
    }
  } else {
    std::size_t next = 0;
    double clock = 0.0;
    double period = config.stress_period_ms;
    if (!(period > 0.0)) {
      // Calibration keyframes are processed synchronously.
      const std::size_t calib = std::min(config.stress_calibration_kfs, n);
      double sum = 0.0;
      for (; next < calib; ++next) {
        mapper.enqueue_keyframe(seq.to_keyframe(next));
        sum += mapper.process_one().total_ms;
      }
      period = calib > 0 ? sum / static_cast<double>(calib) / std::max(config.stress_load, 1e-9) : 1.0;
    }
    out.stress_period_ms = period;
    const std::size_t first_timed = next;
    auto arrival = [&](std::size_t k) { return static_cast<double>(k - first_timed) * period; };
    auto poll = [&] {
      while (next < n && arrival(next) <= clock) {
        mapper.enqueue_keyframe(seq.to_keyframe(next));
        ++next;
      }
    };
    mapper.set_stage_hook([&](Stage s, double ms) {
      clock += ms * config.stage_delay_multipliers[static_cast<std::size_t>(s)];
      poll();
    });
    while (next < n || mapper.queue_depth() > 0) {
      poll();
      if (mapper.queue_depth() == 0) {
        clock = arrival(next);
        poll();
      }
      mapper.process_one();
    }
    mapper.set_stage_hook(nullptr);
  }

  out.trajectory = mapper.trajectory();
  out.timings = mapper.timings();
  out.skips = mapper.skip_stats();
  out.ledger = mapper.store().ledger();
  out.counters = mapper.counters();
  out.errors = mapper.errors();
  out.processed = out.timings.size();
  out.map_digest = mapper.map().digest();
  out.audit_violations = mapper.map().audit().size();
  out.map = std::make_shared<Map>(std::move(mapper.map()));
  return out;
}

}  // namespace lmap
