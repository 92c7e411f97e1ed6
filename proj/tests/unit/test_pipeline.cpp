#include <gtest/gtest.h>

#include "../support/scene.hpp"

namespace lmap {
namespace {

// Small line world; generated once per test binary.
const Sequence& small_sequence(bool noisy) {
  static const Sequence clean = [] {
    WorldConfig c;
    c.seed = 5;
    c.landmark_count = 600;
    c.keyframe_count = 12;
    return generate_sequence(c);
  }();
  static const Sequence noisy_seq = [] {
    WorldConfig c;
    c.seed = 6;
    c.landmark_count = 600;
    c.keyframe_count = 12;
    c.pixel_noise_sigma = 1.0;
    c.spurious_feature_fraction = 0.1;
    c.duplicate_injection_rate = 0.05;
    return generate_sequence(c);
  }();
  return noisy ? noisy_seq : clean;
}

PipelineConfig config_for(Mode mode, std::size_t workers = 4) {
  PipelineConfig c;
  c.mode = mode;
  c.worker_count = workers;
  return c;
}

TEST(LocalMapper, QueueAcceptsUpToCapacity) {
  const Sequence& seq = small_sequence(false);
  LocalMapper m;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(m.enqueue_keyframe(seq.to_keyframe(k)), EnqueueResult::kAccepted);
  }
  EXPECT_EQ(m.enqueue_keyframe(seq.to_keyframe(3)), EnqueueResult::kDropped);
  EXPECT_EQ(m.queue_depth(), 3u);
  EXPECT_EQ(m.skip_stats().dropped, 1);
}

TEST(LocalMapper, ProcessingAnEmptyQueueIsInvalidState) {
  LocalMapper m;
  try {
    m.process_one();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidState);
  }
}

TEST(LocalMapper, LoneKeyframeRunsEveryStageButBA) {
  const Sequence& seq = small_sequence(false);
  LocalMapper m;
  m.enqueue_keyframe(seq.to_keyframe(0));
  const StageTimings t0 = m.process_one();
  EXPECT_FALSE(t0.lba_ran);
  EXPECT_TRUE(t0.culling_ran);
  EXPECT_EQ(m.skip_stats().lba_skips, 0);
  m.enqueue_keyframe(seq.to_keyframe(1));
  const StageTimings t1 = m.process_one();
  EXPECT_TRUE(t1.lba_ran);
  EXPECT_TRUE(t1.culling_ran);
  EXPECT_GT(m.counters().points_created, 0);
  EXPECT_TRUE(m.errors().empty());
  EXPECT_TRUE(m.store().is_resident(1));
}

TEST(LocalMapper, BacklogSkipsBAAndCulling) {
  const Sequence& seq = small_sequence(false);
  LocalMapper m;
  m.enqueue_keyframe(seq.to_keyframe(0));
  m.process_one();
  for (std::size_t k = 1; k < 4; ++k) {
    m.enqueue_keyframe(seq.to_keyframe(k));
  }
  const StageTimings a = m.process_one();
  const StageTimings b = m.process_one();
  const StageTimings c = m.process_one();
  EXPECT_FALSE(a.lba_ran);
  EXPECT_FALSE(a.culling_ran);
  EXPECT_FALSE(b.lba_ran);
  EXPECT_FALSE(b.culling_ran);
  EXPECT_TRUE(c.lba_ran);
  EXPECT_TRUE(c.culling_ran);
  EXPECT_EQ(m.skip_stats().lba_skips, 2);
  EXPECT_EQ(m.skip_stats().culling_skips, 2);
  EXPECT_EQ(a[Stage::kLba], 0.0);
  EXPECT_EQ(m.skip_stats().queue_depth_trace, (std::vector<std::size_t> {0, 2, 1, 0}));
}

TEST(LocalMapper, ForcedSkipIsCountedSeparately) {
  const Sequence& seq = small_sequence(false);
  PipelineConfig c;
  c.force_skip_lba = true;
  const RunResult r = run_sequence(seq, c);
  EXPECT_EQ(r.skips.forced_lba_skips, static_cast<int>(seq.keyframes.size()));
  EXPECT_EQ(r.skips.lba_skips, 0);
  EXPECT_EQ(r.counters.lba_runs, 0);
}

TEST(RunSequence, TimingsAreComplete) {
  const Sequence& seq = small_sequence(true);
  const RunResult r = run_sequence(seq, config_for(Mode::kOptimized));
  ASSERT_EQ(r.processed, seq.keyframes.size());
  ASSERT_EQ(r.timings.size(), seq.keyframes.size());
  EXPECT_EQ(r.skips.queue_depth_trace.size(), r.processed);
  for (std::size_t k = 0; k < r.timings.size(); ++k) {
    const StageTimings& t = r.timings[k];
    EXPECT_EQ(t.kf_id, static_cast<KeyFrameId>(k));
    double sum = 0.0;
    for (double ms : t.stage_ms) {
      EXPECT_GE(ms, 0.0);
      sum += ms;
    }
    EXPECT_GE(t.total_ms, sum - 1e-9);
    EXPECT_GT(t.keyframes, 0u);
  }
  EXPECT_TRUE(r.errors.empty());
  EXPECT_EQ(r.audit_violations, 0u);
  EXPECT_EQ(r.trajectory.size(), seq.keyframes.size());
}

TEST(RunSequence, ModesProduceTheSameMap) {
  for (bool noisy : {false, true}) {
    const Sequence& seq = small_sequence(noisy);
    const RunResult base = run_sequence(seq, config_for(Mode::kBaseline));
    for (std::size_t w : {1, 2, 4}) {
      const RunResult opt = run_sequence(seq, config_for(Mode::kOptimized, w));
      EXPECT_EQ(opt.map_digest, base.map_digest) << "workers " << w;
      ASSERT_EQ(opt.trajectory.size(), base.trajectory.size());
      for (std::size_t i = 0; i < opt.trajectory.size(); ++i) {
        EXPECT_EQ(opt.trajectory[i].pose, base.trajectory[i].pose);
      }
    }
    EXPECT_GT(base.ledger.naive_bytes_up, base.ledger.persistent_bytes_up);
  }
}

TEST(RunSequence, ExactDataGivesExactTrajectory) {
  WorldConfig c;
  c.seed = 9;
  c.landmark_count = 600;
  c.keyframe_count = 12;
  c.descriptor_flip_bits = 0;
  c.init_rotation_sigma = 0.0;
  c.init_translation_sigma = 0.0;
  const Sequence seq = generate_sequence(c);
  const RunResult r = run_sequence(seq, config_for(Mode::kOptimized, 2));
  EXPECT_LT(run_ate(seq, r), 1e-6);
}

TEST(RunSequence, StressCausesSkips) {
  const Sequence& seq = small_sequence(true);
  const RunResult calm = run_sequence(seq, config_for(Mode::kOptimized));
  EXPECT_EQ(calm.skips.lba_skips + calm.skips.culling_skips + calm.skips.dropped, 0);

  PipelineConfig c = config_for(Mode::kOptimized);
  c.stress = true;
  c.stress_period_ms = 1e-6;
  const RunResult hot = run_sequence(seq, c);
  EXPECT_GT(hot.skips.lba_skips, 0);
  EXPECT_GT(hot.skips.dropped, 0);
  EXPECT_EQ(hot.processed + static_cast<std::size_t>(hot.skips.dropped), seq.keyframes.size());
  EXPECT_EQ(hot.audit_violations, 0u);
  EXPECT_DOUBLE_EQ(hot.stress_period_ms, 1e-6);
}

TEST(RunSequence, CalibratedStressPeriodIsPositive) {
  const Sequence& seq = small_sequence(true);
  PipelineConfig c = config_for(Mode::kOptimized);
  c.stress = true;
  const RunResult r = run_sequence(seq, c);
  EXPECT_GT(r.stress_period_ms, 0.0);
  EXPECT_EQ(r.processed + static_cast<std::size_t>(r.skips.dropped), seq.keyframes.size());
}

TEST(RunSequence, CulledKeyframesStayInTheTrajectory) {
  const Sequence& seq = small_sequence(false);
  const RunResult r = run_sequence(seq, config_for(Mode::kOptimized));
  EXPECT_EQ(r.trajectory.size(), seq.keyframes.size());
  std::size_t live = 0;
  for (const EstimatedPose& p : r.trajectory) {
    live += r.map->keyframe_alive(p.kf_id);
  }
  EXPECT_EQ(seq.keyframes.size() - live, static_cast<std::size_t>(r.counters.keyframes_culled));
}

}  // namespace
}  // namespace lmap
