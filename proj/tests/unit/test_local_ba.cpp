#include <memory>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "../support/scene.hpp"

namespace lmap {
namespace {

using testing::View;

// Five exact views along x with every shared landmark bound.
struct LineScene {
  std::mt19937_64 rng;
  testing::World world;
  std::vector<View> views;
  Map map;
  std::vector<SE3Pose> truth;
  std::vector<MapPointId> ids;

  explicit LineScene(std::uint64_t seed, int n_views = 5) : rng(seed) {
    world = testing::random_world(rng, 200);
    for (int i = 0; i < n_views; ++i) {
      truth.push_back(testing::camera_at(0.1 * i, 0.01 * i));
      views.push_back(testing::observe(world, i, truth.back(), rng));
      map.insert_keyframe(views.back().kf);
    }
    ids = testing::bind_landmarks(map, world, views);
  }

  void perturb(KeyFrameId keep_a, KeyFrameId keep_b, double rot, double trans, double pt) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (KeyFrameId id : map.live_keyframe_ids()) {
      if (id == keep_a || id == keep_b) {
        continue;
      }
      Vec6 d;
      d << rot * g(rng), rot * g(rng), rot * g(rng), trans * g(rng), trans * g(rng), trans * g(rng);
      map.set_keyframe_pose(id, retract_right(map.keyframe(id).pose, d));
    }
    for (MapPointId id : ids) {
      if (id >= 0) {
        map.set_point_position(id, map.point(id).position + pt * Vec3(g(rng), g(rng), g(rng)));
      }
    }
  }
};

double pose_error(const SE3Pose& a, const SE3Pose& b) {
  return rotation_angle_between(a, b) + (a.translation - b.translation).norm();
}

std::vector<std::pair<KeyFrameId, int>> slots(std::initializer_list<std::pair<KeyFrameId, int>> l) { return l; }

// ---------------------------------------------------------------------------
// Window selection

TEST(LocalWindow, ChainWithWindowTwo) {
  std::mt19937_64 rng(1);
  Map map;
  for (KeyFrameId id = 0; id < 3; ++id) {
    map.insert_keyframe(testing::bare_keyframe(id, 20, rng));
  }
  for (int i = 0; i < 5; ++i) {
    map.create_map_point(Vec3(0, 0, 3), 0, slots({{0, i}, {1, i}}));
    map.create_map_point(Vec3(0, 0, 3), 1, slots({{1, 10 + i}, {2, i}}));
  }
  BAConfig cfg;
  cfg.window_size = 2;
  const BAWindow w = build_local_window(map, 2, cfg);
  EXPECT_EQ(w.local_kf_ids, (std::vector<KeyFrameId> {2, 1}));
  EXPECT_EQ(w.fixed_kf_ids, (std::vector<KeyFrameId> {0}));
  EXPECT_EQ(w.point_ids.size(), 10u);
  EXPECT_EQ(w.factors.size(), 20u);
}

TEST(LocalWindow, SingleKeyframeIsTooSmall) {
  std::mt19937_64 rng(2);
  Map map;
  map.insert_keyframe(testing::bare_keyframe(0, 5, rng));
  try {
    build_local_window(map, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWindowTooSmall);
  }
}

TEST(LocalWindow, IsolatedGroupFixesItsTwoOldest) {
  LineScene s(3);
  const BAWindow w = build_local_window(s.map, 4);
  EXPECT_EQ(w.fixed_kf_ids, (std::vector<KeyFrameId> {0, 1}));
  std::vector<KeyFrameId> local = w.local_kf_ids;
  std::sort(local.begin(), local.end());
  EXPECT_EQ(local, (std::vector<KeyFrameId> {2, 3, 4}));
  for (const BAFactor& f : w.factors) {
    const KeyPoint& kp = s.map.keyframe(f.kf_id).keypoints[static_cast<std::size_t>(
        s.map.point(f.point_id).observations.at(f.kf_id))];
    EXPECT_EQ(f.observed, kp.pixel());
    EXPECT_EQ(f.level, kp.level);
  }
}

// ---------------------------------------------------------------------------
// Factor

TEST(ReprojectionFactor, PerfectObservation) {
  const CameraIntrinsics k;
  const SE3Pose pose = testing::camera_at(0.2, -0.1);
  const Vec3 x(0.3, 0.4, 4.0);
  const Vec2 obs = k.project_unchecked(pose.transform(x));
  const FactorLinearization f = residual_and_jacobian(pose, k, x, obs, 3);
  EXPECT_TRUE(f.active);
  EXPECT_LT(f.residual.norm(), 1e-12);
  EXPECT_EQ(f.weight, 1.0);
}

TEST(ReprojectionFactor, ResidualIsScaledByLevel) {
  const CameraIntrinsics k;
  const SE3Pose pose = testing::camera_at(0.0);
  const Vec3 x(0.0, 0.0, 4.0);
  const Vec2 obs = k.project_unchecked(pose.transform(x)) + Vec2(1.44, 0.0);
  EXPECT_NEAR(residual_and_jacobian(pose, k, x, obs, 2).residual.x(), -1.0, 1e-12);
}

TEST(ReprojectionFactor, BehindCameraIsInactive) {
  const FactorLinearization f =
      residual_and_jacobian(testing::camera_at(0.0), CameraIntrinsics {}, Vec3(0, 0, -2), Vec2(376, 240), 0);
  EXPECT_FALSE(f.active);
}

TEST(ReprojectionFactor, HuberWeights) {
  const double delta = std::sqrt(5.991);
  EXPECT_EQ(huber_weight(0.5 * delta, delta), 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(2.0 * delta, delta), 0.5);
  EXPECT_DOUBLE_EQ(huber_cost(delta, delta), delta * delta);
  EXPECT_DOUBLE_EQ(huber_cost(3.0 * delta, delta), 5.0 * delta * delta);
  for (double n = delta; n < 100.0; n += 1.0) {
    EXPECT_LE(huber_cost(n, delta), n * n);
  }
}

TEST(ReprojectionFactor, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CameraIntrinsics k;
  const double h = 1e-6;
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 c(u(rng), u(rng), u(rng));
    Vec6 tilt;
    tilt << 0.1 * g(rng), 0.1 * g(rng), 0.1 * g(rng), 0, 0, 0;
    const SE3Pose pose = retract_right(testing::camera_at(c), tilt);
    const Vec3 x = pose.inverse().transform(Vec3(u(rng), u(rng), 3.0 + 2.0 * u(rng)));
    const int level = trial % 8;
    const Vec2 obs(376 + 20 * u(rng), 240 + 20 * u(rng));
    const FactorLinearization f = residual_and_jacobian(pose, k, x, obs, level);
    ASSERT_TRUE(f.active);
    const double scale = f.j_pose.norm() + f.j_point.norm();
    for (int i = 0; i < 6; ++i) {
      Vec6 d = Vec6::Zero();
      d[i] = h;
      const Vec2 rp = residual_and_jacobian(retract_right(pose, d), k, x, obs, level).residual;
      const Vec2 rm = residual_and_jacobian(retract_right(pose, -d), k, x, obs, level).residual;
      EXPECT_LT(((rp - rm) / (2 * h) - f.j_pose.col(i)).norm(), 1e-5 * scale) << "trial " << trial << " pose " << i;
    }
    for (int i = 0; i < 3; ++i) {
      Vec3 d = Vec3::Zero();
      d[i] = h;
      const Vec2 rp = residual_and_jacobian(pose, k, x + d, obs, level).residual;
      const Vec2 rm = residual_and_jacobian(pose, k, x - d, obs, level).residual;
      EXPECT_LT(((rp - rm) / (2 * h) - f.j_point.col(i)).norm(), 1e-5 * scale) << "trial " << trial << " point " << i;
    }
  }
}

// ---------------------------------------------------------------------------
// Schur complement

TEST(Schur, StepMatchesDenseSolve) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LineScene s(10 + seed);
    s.perturb(0, 1, 0.01, 0.02, 0.05);
    const BAWindow w = build_local_window(s.map, 4);
    const BAProblem p = make_problem(s.map, w);
    const NormalEquations neq = p.assemble(p.linearize());
    for (double lambda : {1e-4, 1.0}) {
      Eigen::VectorXd b;
      const Eigen::MatrixXd h = testing::dense_system(neq, lambda, b);
      const Eigen::VectorXd x = h.ldlt().solve(b);
      const LMStep step = solve_schur_step(neq, lambda);
      const int np = neq.num_poses();
      EXPECT_LT((step.pose_delta - x.head(6 * np)).norm(), 1e-8 * (1.0 + x.norm()));
      for (int k = 0; k < neq.num_points(); ++k) {
        EXPECT_LT((step.point_delta[static_cast<std::size_t>(k)] - x.segment<3>(6 * np + 3 * k)).norm(),
                  1e-8 * (1.0 + x.norm()));
      }
    }
  }
}

TEST(Schur, NoCouplingLeavesDampedPoseBlocks) {
  NormalEquations neq;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 3; ++i) {
    Mat66 a;
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) {
        a(r, c) = g(rng);
      }
    }
    neq.h_pp.push_back(a * a.transpose() + Mat66::Identity());
    neq.b_p.push_back(Vec6::Constant(1.0));
  }
  for (int k = 0; k < 4; ++k) {
    neq.h_ll.push_back(Mat33::Identity() * 2.0);
    neq.b_l.push_back(Vec3::Zero());
    neq.h_pl.emplace_back();
  }
  const double lambda = 0.5;
  const ReducedSystem r = schur_reduce(neq, lambda);
  for (int i = 0; i < 3; ++i) {
    const Mat66 want = neq.h_pp[static_cast<std::size_t>(i)] + lambda * Mat66::Identity();
    EXPECT_EQ(Mat66(r.s.block(6 * i, 6 * i, 6, 6)), want);
  }
  EXPECT_TRUE(r.s.block(0, 6, 6, 6).isZero(0.0));
}

// ---------------------------------------------------------------------------
// Optimization

TEST(LocalBA, PerturbedWindowIsRecovered) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LineScene s(20 + seed);
    s.perturb(0, 1, 0.005, 0.01, 0.03);
    const BAWindow w = build_local_window(s.map, 4);
    BAConfig cfg;
    cfg.max_iters = 50;
    const BAReport r = lm_optimize(s.map, w, cfg);
    EXPECT_LT(r.final_cost, 1e-12) << to_string(r.reason);
    for (KeyFrameId id = 0; id < 5; ++id) {
      EXPECT_LT(pose_error(s.map.keyframe(id).pose, s.truth[static_cast<std::size_t>(id)]), 1e-6) << "kf " << id;
    }
    for (std::size_t l = 0; l < s.ids.size(); ++l) {
      if (s.ids[l] >= 0) {
        EXPECT_LT((s.map.point(s.ids[l]).position - s.world.landmarks[l]).norm(), 1e-6);
      }
    }
  }
}

TEST(LocalBA, OptimalWindowNeedsNoIterations) {
  LineScene s(30);
  const BAReport r = lm_optimize(s.map, build_local_window(s.map, 4));
  EXPECT_LE(r.iterations, 1);
  EXPECT_LT(r.final_cost, 1e-12);
}

TEST(LocalBA, AcceptedCostsNeverRise) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    LineScene s(40 + seed);
    s.perturb(0, 1, 0.02, 0.05, 0.1);
    const BAReport r = lm_optimize(s.map, build_local_window(s.map, 4));
    double last = r.initial_cost;
    for (const IterationRecord& it : r.history) {
      if (it.accepted) {
        EXPECT_LT(it.cost, last);
        last = it.cost;
      }
    }
    EXPECT_LE(r.final_cost, r.initial_cost);
    EXPECT_EQ(r.final_cost, last);
  }
}

TEST(LocalBA, FixedPosesAreUntouched) {
  LineScene s(50);
  s.perturb(0, 1, 0.01, 0.02, 0.05);
  const SE3Pose p0 = s.map.keyframe(0).pose;
  const SE3Pose p1 = s.map.keyframe(1).pose;
  lm_optimize(s.map, build_local_window(s.map, 4));
  EXPECT_EQ(s.map.keyframe(0).pose.rotation.coeffs(), p0.rotation.coeffs());
  EXPECT_EQ(s.map.keyframe(0).pose.translation, p0.translation);
  EXPECT_EQ(s.map.keyframe(1).pose.rotation.coeffs(), p1.rotation.coeffs());
  EXPECT_EQ(s.map.keyframe(1).pose.translation, p1.translation);
}

TEST(LocalBA, GrossOutlierPullsLessThanWithPlainSquares) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LineScene s(60 + seed);
    BAWindow w = build_local_window(s.map, 4);
    // One observation in the newest keyframe moved by 50 px.
    for (BAFactor& f : w.factors) {
      if (f.kf_id == 4) {
        f.observed += Vec2(50.0, -30.0);
        break;
      }
    }
    Map robust = s.map;
    Map plain = s.map;
    BAConfig cfg;
    cfg.max_iters = 30;
    lm_optimize(robust, w, cfg);
    cfg.huber_delta = 1e12;
    lm_optimize(plain, w, cfg);
    const auto err = [&](const Map& m) {
      return pose_error(m.keyframe(4).pose, s.truth[4]);
    };
    EXPECT_LT(err(robust), err(plain));
    EXPECT_LT(err(robust), 5e-3);
  }
}

TEST(LocalBA, NoActiveFactors) {
  LineScene s(70);
  const BAWindow w = build_local_window(s.map, 4);
  for (MapPointId id : w.point_ids) {
    s.map.set_point_position(id, Vec3(0.0, 0.0, -5.0));
  }
  const BAReport r = lm_optimize(s.map, w);
  EXPECT_EQ(r.reason, ConvergenceReason::kNoActiveFactors);
  EXPECT_EQ(r.iterations, 0);
}

TEST(LocalBA, SameResultForEveryWorkerCount) {
  std::vector<std::unique_ptr<WorkerPool>> pools;
  for (std::size_t n : {1, 2, 8}) {
    pools.push_back(std::make_unique<WorkerPool>(n));
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LineScene ref(80 + seed);
    ref.perturb(0, 1, 0.01, 0.03, 0.05);
    Map start = ref.map;
    const BAReport want = lm_optimize(ref.map, build_local_window(ref.map, 4));
    for (auto& pool : pools) {
      Map m = start;
      const BAReport got = lm_optimize(m, build_local_window(m, 4), {}, pool.get());
      EXPECT_EQ(got, want);
      EXPECT_EQ(m.digest(), ref.map.digest());
    }
  }
}

}  // namespace
}  // namespace lmap
