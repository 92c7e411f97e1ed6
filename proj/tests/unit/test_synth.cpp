#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "../support/scene.hpp"

namespace lmap {
namespace {

WorldConfig small_world(std::uint64_t seed = 42) {
  WorldConfig c;
  c.seed = seed;
  c.landmark_count = 600;
  c.keyframe_count = 10;
  return c;
}

std::string serialized(const Sequence& s) {
  std::ostringstream os;
  write_sequence(os, s);
  return os.str();
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

// ---------------------------------------------------------------------------
// Generator

TEST(Generator, SameConfigSameBytes) {
  WorldConfig c = small_world();
  c.pixel_noise_sigma = 1.0;
  c.duplicate_injection_rate = 0.05;
  c.spurious_feature_fraction = 0.1;
  EXPECT_EQ(serialized(generate_sequence(c)), serialized(generate_sequence(c)));
  WorldConfig d = c;
  d.seed = 43;
  EXPECT_NE(serialized(generate_sequence(c)), serialized(generate_sequence(d)));
}

TEST(Generator, ZeroNoiseProjectsExactly) {
  const Sequence s = generate_sequence(small_world());
  for (std::size_t k = 0; k < s.keyframes.size(); ++k) {
    const SequenceKeyFrame& kf = s.keyframes[k];
    const GroundTruthKeyFrame& gt = s.ground_truth[k];
    ASSERT_EQ(kf.keypoints.size(), gt.landmark_ids.size());
    for (std::size_t i = 0; i < kf.keypoints.size(); ++i) {
      const Vec3 pc = gt.pose.transform(s.landmarks[static_cast<std::size_t>(gt.landmark_ids[i])]);
      const Vec2 px = s.intrinsics.project_unchecked(pc);
      EXPECT_LT((px - kf.keypoints[i].pixel()).norm(), 1e-9);
      EXPECT_EQ(kf.keypoints[i].level, testing::level_from_distance(pc.norm(), s.intrinsics));
    }
  }
}

TEST(Generator, FirstTwoPosesAreExactLaterOnesAreNot) {
  const Sequence s = generate_sequence(small_world());
  EXPECT_EQ(s.keyframes[0].pose_init, s.ground_truth[0].pose);
  EXPECT_EQ(s.keyframes[1].pose_init, s.ground_truth[1].pose);
  EXPECT_FALSE(s.keyframes[2].pose_init == s.ground_truth[2].pose);
  EXPECT_LT((s.keyframes[2].pose_init.translation - s.ground_truth[2].pose.translation).norm(), 0.1);
}

TEST(Generator, DuplicateRate) {
  WorldConfig c = small_world();
  c.landmark_count = 1000;
  c.duplicate_injection_rate = 0.1;
  const Sequence s = generate_sequence(c);
  ASSERT_EQ(s.duplicates.size(), 100u);
  EXPECT_EQ(s.landmarks.size(), 1100u);
  std::set<std::int64_t> twins;
  for (const DuplicatePair& d : s.duplicates) {
    EXPECT_LT(d.original, 1000);
    EXPECT_GE(d.twin, 1000);
    EXPECT_EQ(s.landmarks[static_cast<std::size_t>(d.original)], s.landmarks[static_cast<std::size_t>(d.twin)]);
    twins.insert(d.twin);
  }
  EXPECT_EQ(twins.size(), 100u);
}

TEST(Generator, ConsecutiveKeyframesShareEnoughLandmarks) {
  for (auto kind : {TrajectoryKind::kLine, TrajectoryKind::kOrbit, TrajectoryKind::kCorridorLoop}) {
    WorldConfig c = small_world(7);
    c.trajectory = kind;
    c.keyframe_count = 50;
    c.landmark_count = 1500;
    const Sequence s = generate_sequence(c);
    for (std::size_t k = 1; k < s.ground_truth.size(); ++k) {
      std::set<std::int64_t> prev(s.ground_truth[k - 1].landmark_ids.begin(), s.ground_truth[k - 1].landmark_ids.end());
      int shared = 0;
      for (std::int64_t id : s.ground_truth[k].landmark_ids) {
        shared += id >= 0 && prev.contains(id);
      }
      EXPECT_GE(shared, c.min_covisible) << to_string(kind) << " kf " << k;
    }
  }
}

TEST(Generator, ImpossibleCovisibilityFails) {
  WorldConfig c = small_world();
  c.landmark_count = 20;
  c.max_retries = 2;
  EXPECT_EQ(code_of([&] { generate_sequence(c); }), ErrorCode::kGenerationFailed);
}

TEST(Generator, SpuriousFeaturesAreLabelled) {
  WorldConfig c = small_world();
  c.spurious_feature_fraction = 0.2;
  const Sequence s = generate_sequence(c);
  for (const GroundTruthKeyFrame& gt : s.ground_truth) {
    const auto spurious = std::count(gt.landmark_ids.begin(), gt.landmark_ids.end(), -1);
    const auto real = static_cast<long>(gt.landmark_ids.size()) - spurious;
    EXPECT_EQ(spurious, std::lround(0.2 * static_cast<double>(real)));
  }
}

TEST(Generator, InvalidConfigIsRejected) {
  WorldConfig c = small_world();
  c.landmark_count = 0;
  EXPECT_EQ(code_of([&] { generate_sequence(c); }), ErrorCode::kInvalidArgument);
  c = small_world();
  c.spurious_feature_fraction = 1.0;
  EXPECT_EQ(code_of([&] { generate_sequence(c); }), ErrorCode::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Sequence file

TEST(SequenceFile, RoundTrip) {
  WorldConfig c = small_world();
  c.pixel_noise_sigma = 0.7;
  c.duplicate_injection_rate = 0.05;
  c.spurious_feature_fraction = 0.1;
  const Sequence s = generate_sequence(c);
  const std::string text = serialized(s);
  std::istringstream is(text);
  const Sequence back = read_sequence(is);
  EXPECT_EQ(serialized(back), text);
  ASSERT_EQ(back.keyframes.size(), s.keyframes.size());
  EXPECT_EQ(back.duplicates, s.duplicates);
  EXPECT_EQ(back.intrinsics, s.intrinsics);
  for (std::size_t k = 0; k < s.keyframes.size(); ++k) {
    ASSERT_EQ(back.keyframes[k].descriptors, s.keyframes[k].descriptors);
    for (std::size_t i = 0; i < s.keyframes[k].keypoints.size(); ++i) {
      EXPECT_EQ(back.keyframes[k].keypoints[i].pixel(), s.keyframes[k].keypoints[i].pixel());
    }
    EXPECT_EQ(back.ground_truth[k].pose, s.ground_truth[k].pose);
  }
}

TEST(SequenceFile, ParseErrors) {
  const auto parse = [](const std::string& text) {
    return code_of([&] {
      std::istringstream is(text);
      read_sequence(is);
    });
  };
  EXPECT_EQ(parse("not json\n"), ErrorCode::kParse);
  EXPECT_EQ(parse(""), ErrorCode::kParse);
  EXPECT_EQ(parse("{\"type\":\"mystery\"}\n"), ErrorCode::kParse);
  EXPECT_EQ(parse("{\"type\":\"keyframe\",\"id\":0}\n"), ErrorCode::kParse);

  const std::string good = serialized(generate_sequence(small_world()));
  const std::string header = good.substr(0, good.find('\n') + 1);
  EXPECT_EQ(parse(header + "{\"type\":\"keyframe\",\"id\":0}\n"), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { read_sequence(std::string("/nonexistent/seq.jsonl")); }), ErrorCode::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Trajectories and ATE

Trajectory random_trajectory(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    t.push_back({0.1 * i, Vec3(g(rng), g(rng), g(rng)), q.normalized()});
  }
  return t;
}

TEST(Tum, RoundTrip) {
  std::mt19937_64 rng(1);
  const Trajectory t = random_trajectory(rng, 20);
  std::stringstream ss;
  write_tum(ss, t);
  const Trajectory back = read_tum(ss);
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(back[i].timestamp, t[i].timestamp, 1e-9);
    EXPECT_LT((back[i].position - t[i].position).norm(), 1e-8);
    EXPECT_LT(back[i].orientation.angularDistance(t[i].orientation), 1e-8);
  }
}

TEST(Tum, CommentsCommasAndErrors) {
  std::istringstream ok("# header\n\n0.0, 1 2 3, 0 0 0 1\n");
  const Trajectory t = read_tum(ok);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].position, Vec3(1, 2, 3));
  std::istringstream short_line("0.0 1 2 3 0 0\n");
  EXPECT_EQ(code_of([&] { read_tum(short_line); }), ErrorCode::kParse);
  std::istringstream zero_q("0.0 1 2 3 0 0 0 0\n");
  EXPECT_EQ(code_of([&] { read_tum(zero_q); }), ErrorCode::kParse);
}

TEST(Tum, AssociationByTimestamp) {
  std::mt19937_64 rng(2);
  const Trajectory gt = random_trajectory(rng, 10);
  Trajectory est = {gt[7], gt[2], gt[4]};
  est.push_back({55.0, Vec3::Zero(), Eigen::Quaterniond::Identity()});
  const auto [e, g] = associate(est, gt);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(g[0].timestamp, gt[7].timestamp);
  EXPECT_EQ(g[2].timestamp, gt[4].timestamp);
}

TEST(Ate, IdenticalIsZero) {
  std::mt19937_64 rng(3);
  const Trajectory t = random_trajectory(rng, 30);
  EXPECT_LT(ate_rmse(t, t), 1e-12);
}

TEST(Ate, RigidTransformIsRemoved) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Trajectory gt = random_trajectory(rng, 25);
    const Eigen::Quaterniond q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized();
    const Vec3 shift(5 * g(rng), 5 * g(rng), 5 * g(rng));
    Trajectory est = gt;
    for (StampedPose& p : est) {
      p.position = q * p.position + shift;
    }
    EXPECT_LT(ate_rmse(est, gt), 1e-9);
    // A scale change survives rigid alignment but not similarity alignment.
    for (StampedPose& p : est) {
      p.position *= 2.5;
    }
    EXPECT_GT(ate_rmse(est, gt), 1e-3);
    const AteResult sim = ate(est, gt, true);
    EXPECT_LT(sim.rmse, 1e-9);
    EXPECT_NEAR(sim.scale, 1.0 / 2.5, 1e-9);
  }
}

TEST(Ate, GaussianNoiseGivesItsRms) {
  // Per-axis sigma/sqrt(3) makes the 3D RMS sigma; alignment removes a little.
  const double sigma = 0.01;
  std::vector<double> rmses;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sigma / std::sqrt(3.0));
    Trajectory gt;
    for (int i = 0; i < 200; ++i) {
      gt.push_back({0.1 * i, Vec3(0.05 * i, std::sin(0.1 * i), 0.3 * std::cos(0.05 * i)),
                    Eigen::Quaterniond::Identity()});
    }
    Trajectory est = gt;
    for (StampedPose& p : est) {
      p.position += Vec3(g(rng), g(rng), g(rng));
    }
    const double r = ate_rmse(est, gt);
    EXPECT_GE(r, 0.007);
    EXPECT_LE(r, 0.013);
    rmses.push_back(r);
  }
  EXPECT_NEAR(mean_std(rmses).mean, sigma, 0.001);
}

TEST(Ate, TooFewPosesOrLengthMismatch) {
  std::mt19937_64 rng(5);
  const Trajectory t = random_trajectory(rng, 2);
  EXPECT_EQ(code_of([&] { ate(t, t); }), ErrorCode::kInsufficientData);
  const Trajectory u = random_trajectory(rng, 5);
  const Trajectory v = random_trajectory(rng, 4);
  EXPECT_EQ(code_of([&] { ate(u, v); }), ErrorCode::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Reports

RunResult fake_run(Mode mode, double total, bool lba) {
  RunResult r;
  r.config.mode = mode;
  for (int k = 0; k < 4; ++k) {
    StageTimings t;
    t.kf_id = k;
    t.stage_ms = {total / 6, total / 6, total / 6, total / 6, lba ? total / 6 : 0.0, total / 6};
    t.total_ms = total;
    t.lba_ran = lba;
    t.culling_ran = true;
    r.timings.push_back(t);
  }
  r.processed = r.timings.size();
  r.skips.lba_skips = lba ? 0 : 4;
  return r;
}

TEST(Report, SingleRunTable) {
  Sequence seq;
  const json rep = run_report(seq, {fake_run(Mode::kOptimized, 12.0, true)});
  EXPECT_EQ(rep.at("mode"), "optimized");
  EXPECT_DOUBLE_EQ(rep.at("stages").at("total").at("mean_ms").get<double>(), 12.0);
  EXPECT_DOUBLE_EQ(rep.at("stages").at("lba").at("mean_ms").get<double>(), 2.0);
  EXPECT_TRUE(rep.at("ate_rmse").is_null());
  const std::string table = run_table(rep);
  for (auto name : kStageNames) {
    EXPECT_NE(table.find(std::string(name)), std::string::npos);
  }
  EXPECT_NE(table.find("12.000 +- 0.000"), std::string::npos);
}

TEST(Report, SkippedStagesAreLeftOutOfTheirStatistics) {
  Sequence seq;
  const json rep = run_report(seq, {fake_run(Mode::kBaseline, 12.0, false)});
  EXPECT_EQ(rep.at("stages").at("lba").at("count").get<int>(), 0);
  EXPECT_DOUBLE_EQ(rep.at("lba_skips").get<double>(), 4.0);
  EXPECT_EQ(rep.at("runs").at(0).at("lba_skips").get<int>(), 4);
}

TEST(Report, SpeedupIsTheRatioOfMeans) {
  Sequence seq;
  const json base = run_report(seq, {fake_run(Mode::kBaseline, 20.0, true)});
  const json opt = run_report(seq, {fake_run(Mode::kOptimized, 10.0, true)});
  const json cmp = compare_reports(base, opt);
  EXPECT_DOUBLE_EQ(cmp.at("stages").at("total").at("speedup").get<double>(), 2.0);
  EXPECT_NE(compare_table(cmp).find("2.00x"), std::string::npos);
}

TEST(Report, MismatchedReportsAreRejected) {
  Sequence a;
  Sequence b;
  b.config.seed = 1;
  const json base = run_report(a, {fake_run(Mode::kBaseline, 20.0, true)});
  const json other = run_report(b, {fake_run(Mode::kOptimized, 10.0, true)});
  EXPECT_EQ(code_of([&] { compare_reports(base, other); }), ErrorCode::kInvalidArgument);
  const json opt = run_report(a, {fake_run(Mode::kOptimized, 10.0, true)});
  EXPECT_EQ(code_of([&] { compare_reports(opt, base); }), ErrorCode::kInvalidArgument);
}

TEST(Report, Statistics) {
  const MeanStd m = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(mean_std({}).count, 0u);
  EXPECT_DOUBLE_EQ(least_squares_slope({1.0, 3.0, 5.0, 7.0}), 2.0);
  EXPECT_DOUBLE_EQ(least_squares_slope({4.0}), 0.0);
}

}  // namespace
}  // namespace lmap
