#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "lmap/error.hpp"
#include "lmap/geometry.hpp"
#include "lmap/map.hpp"
#include "lmap/parallel.hpp"

namespace lmap {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat66 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat33 = Eigen::Matrix3d;

struct BAConfig {
  std::size_t window_size {10};
  std::size_t fixed_cap {20};
  int max_iters {10};
  double lambda0 {1e-4};
  double lambda_up {10.0};
  double lambda_down {2.0};
  double cost_tol {1e-10};
  double cost_abs_tol {1e-20};
  double lambda_max {1e8};
  double huber_delta {std::sqrt(5.991)};
};

struct BAFactor {
  KeyFrameId kf_id {0};
  MapPointId point_id {0};
  Vec2 observed {Vec2::Zero()};
  int level {0};
};

struct BAWindow {
  std::vector<KeyFrameId> local_kf_ids;
  std::vector<KeyFrameId> fixed_kf_ids;
  std::vector<MapPointId> point_ids;
  std::vector<BAFactor> factors;
};

// ----------------------------------------------------------------------------
// Window selection
// ----------------------------------------------------------------------------

/// Current keyframe plus its top covisible neighbors are optimized; other
/// observers of their points are held fixed. When nothing else observes
/// those points the two oldest local keyframes become the gauge.
inline BAWindow build_local_window(const Map& map, KeyFrameId current, const BAConfig& cfg = {}) {
  require(map.keyframe_alive(current), ErrorCode::kInvalidArgument, "current keyframe is not alive");
  require(map.live_keyframe_count() >= 2, ErrorCode::kWindowTooSmall, "local BA needs at least two keyframes");

  BAWindow w;
  w.local_kf_ids.push_back(current);
  for (KeyFrameId id : map.covisible_neighbors(current, cfg.window_size > 0 ? cfg.window_size - 1 : 0)) {
    w.local_kf_ids.push_back(id);
  }
  const std::set<KeyFrameId> local(w.local_kf_ids.begin(), w.local_kf_ids.end());

  std::set<MapPointId> points;
  for (KeyFrameId id : w.local_kf_ids) {
    for (MapPointId mp : map.points_in_keyframe(id)) {
      points.insert(mp);
    }
  }

  std::map<KeyFrameId, int> shared;
  for (MapPointId mp : points) {
    for (const auto& [kf, idx] : map.point(mp).observations) {
      if (!local.contains(kf)) {
        shared[kf] += 1;
      }
    }
  }
  std::vector<std::pair<int, KeyFrameId>> ranked;
  for (const auto& [kf, n] : shared) {
    ranked.emplace_back(n, kf);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t i = 0; i < ranked.size() && i < cfg.fixed_cap; ++i) {
    w.fixed_kf_ids.push_back(ranked[i].second);
  }

  if (w.fixed_kf_ids.empty()) {
    std::vector<KeyFrameId> by_age = w.local_kf_ids;
    std::sort(by_age.begin(), by_age.end());
    const std::size_t n = std::min<std::size_t>(2, by_age.size());
    for (std::size_t i = 0; i < n; ++i) {
      w.fixed_kf_ids.push_back(by_age[i]);
      std::erase(w.local_kf_ids, by_age[i]);
    }
  }

  std::set<KeyFrameId> in_window(w.local_kf_ids.begin(), w.local_kf_ids.end());
  in_window.insert(w.fixed_kf_ids.begin(), w.fixed_kf_ids.end());
  for (MapPointId mp_id : points) {
    const MapPoint& mp = map.point(mp_id);
    std::vector<BAFactor> factors;
    for (const auto& [kf_id, idx] : mp.observations) {
      if (in_window.contains(kf_id)) {
        const KeyPoint& kp = map.keyframe(kf_id).keypoints[static_cast<std::size_t>(idx)];
        factors.push_back({kf_id, mp_id, kp.pixel(), kp.level});
      }
    }
    if (factors.size() >= 2) {
      w.point_ids.push_back(mp_id);
      w.factors.insert(w.factors.end(), factors.begin(), factors.end());
    }
  }
  return w;
}

// ----------------------------------------------------------------------------
// Reprojection factor
// ----------------------------------------------------------------------------

struct FactorLinearization {
  Vec2 residual {Vec2::Zero()};
  Eigen::Matrix<double, 2, 6> j_pose {Eigen::Matrix<double, 2, 6>::Zero()};
  Eigen::Matrix<double, 2, 3> j_point {Eigen::Matrix<double, 2, 3>::Zero()};
  double weight {0.0};
  bool active {false};
};

inline double huber_weight(double norm, double delta) { return norm <= delta ? 1.0 : delta / norm; }

inline double huber_cost(double norm, double delta) {
  return norm <= delta ? norm * norm : 2.0 * delta * norm - delta * delta;
}

/// Residual scaled by the level's inverse standard deviation, with analytic
/// Jacobians for the right perturbation (rotation, then translation) and for
/// the world point. Inactive when the point is not in front of the camera.
inline FactorLinearization residual_and_jacobian(const SE3Pose& pose, const CameraIntrinsics& k, const Vec3& point,
                                                 const Vec2& observed, int level,
                                                 double huber_delta = std::sqrt(5.991)) {
  FactorLinearization f;
  const Mat3 r = pose.rotation_matrix();
  const Vec3 pc = r * point + pose.translation;
  if (!(pc.z() > 0.0)) {
    return f;
  }
  const double inv_sigma = 1.0 / k.level_scale(level);
  const double iz = 1.0 / pc.z();
  f.residual = (k.project_unchecked(pc) - observed) * inv_sigma;

  Eigen::Matrix<double, 2, 3> jproj;
  jproj << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz,
           0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
  jproj *= inv_sigma;

  f.j_point = jproj * r;
  f.j_pose.leftCols<3>() = -f.j_point * skew(point);
  f.j_pose.rightCols<3>() = f.j_point;
  f.weight = huber_weight(f.residual.norm(), huber_delta);
  f.active = true;
  return f;
}

// ----------------------------------------------------------------------------
// Normal equations and Schur complement
// ----------------------------------------------------------------------------

struct Coupling {
  int pose {0};
  Mat63 block {Mat63::Zero()};
};

// Right-hand sides hold the negative gradient: the undamped step solves
// [H_pp H_pl; H_pl^T H_ll] [dp; dl] = [b_p; b_l].
struct NormalEquations {
  std::vector<Mat66> h_pp;
  std::vector<Vec6> b_p;
  std::vector<Mat33> h_ll;
  std::vector<Vec3> b_l;
  std::vector<std::vector<Coupling>> h_pl;

  int num_poses() const { return static_cast<int>(h_pp.size()); }
  int num_points() const { return static_cast<int>(h_ll.size()); }
};

struct ReducedSystem {
  Eigen::MatrixXd s;
  Eigen::VectorXd b_s;
  std::vector<Mat33> w_inv;
};

struct LMStep {
  Eigen::VectorXd pose_delta;
  std::vector<Vec3> point_delta;
};

/// S = (H_pp + lambda I) - H_pl (H_ll + lambda I)^-1 H_pl^T, and the matching
/// reduced right-hand side. Point blocks are inverted in parallel; each
/// pose row of S is then accumulated by one task in ascending point order,
/// so the result is independent of the worker count.
inline ReducedSystem schur_reduce(const NormalEquations& neq, double lambda, WorkerPool* pool = nullptr) {
  const int np = neq.num_poses();
  const int nl = neq.num_points();
  ReducedSystem out;
  out.w_inv.resize(static_cast<std::size_t>(nl));

  std::vector<char> singular(static_cast<std::size_t>(nl), 0);
  parallel_for(pool, static_cast<std::size_t>(nl), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const Mat33 w = neq.h_ll[k] + lambda * Mat33::Identity();
      Eigen::LLT<Mat33> llt(w);
      if (llt.info() != Eigen::Success) {
        singular[k] = 1;
        continue;
      }
      out.w_inv[k] = llt.solve(Mat33::Identity());
    }
  });
  if (std::find(singular.begin(), singular.end(), 1) != singular.end()) {
    fail(ErrorCode::kNumerical, "singular point block; retry with a larger damping");
  }

  // point k, coupling slot c for each pose row
  std::vector<std::vector<std::pair<int, int>>> touches(static_cast<std::size_t>(np));
  for (int k = 0; k < nl; ++k) {
    const auto& row = neq.h_pl[static_cast<std::size_t>(k)];
    for (std::size_t c = 0; c < row.size(); ++c) {
      touches[static_cast<std::size_t>(row[c].pose)].emplace_back(k, static_cast<int>(c));
    }
  }

  out.s = Eigen::MatrixXd::Zero(6 * np, 6 * np);
  out.b_s = Eigen::VectorXd::Zero(6 * np);
  parallel_for(pool, static_cast<std::size_t>(np), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const int row = 6 * static_cast<int>(p);
      out.s.block<6, 6>(row, row) = neq.h_pp[p] + lambda * Mat66::Identity();
      Vec6 b = neq.b_p[p];
      for (const auto& [k, c] : touches[p]) {
        const auto ks = static_cast<std::size_t>(k);
        const Mat63 y = neq.h_pl[ks][static_cast<std::size_t>(c)].block * out.w_inv[ks];
        for (const Coupling& other : neq.h_pl[ks]) {
          out.s.block<6, 6>(row, 6 * other.pose) -= y * other.block.transpose();
        }
        b -= y * neq.b_l[ks];
      }
      out.b_s.segment<6>(row) = b;
    }
  });
  return out;
}

/// Damped step by Schur elimination of the points, a dense solve of the
/// reduced pose system, then point back-substitution.
inline LMStep solve_schur_step(const NormalEquations& neq, double lambda, WorkerPool* pool = nullptr) {
  const ReducedSystem red = schur_reduce(neq, lambda, pool);
  LMStep step;
  if (neq.num_poses() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(red.s.selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success) {
      fail(ErrorCode::kNumerical, "reduced pose system is not positive definite");
    }
    step.pose_delta = llt.solve(red.b_s);
  } else {
    step.pose_delta = Eigen::VectorXd::Zero(0);
  }
  step.point_delta.resize(static_cast<std::size_t>(neq.num_points()));
  parallel_for(pool, step.point_delta.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      Vec3 rhs = neq.b_l[k];
      for (const Coupling& c : neq.h_pl[k]) {
        rhs -= c.block.transpose() * step.pose_delta.segment<6>(6 * c.pose);
      }
      step.point_delta[k] = red.w_inv[k] * rhs;
    }
  });
  if (!step.pose_delta.allFinite()) {
    fail(ErrorCode::kNumerical, "non-finite pose step");
  }
  return step;
}

// ----------------------------------------------------------------------------
// BAProblem
// ----------------------------------------------------------------------------

// Window variables and factors in index form. Poses with var < 0 are fixed.
class BAProblem {

  public:

  struct Pose {
    SE3Pose pose;
    CameraIntrinsics intrinsics;
    bool fixed {false};
  };

  struct Factor {
    int pose {0};
    int point {0};
    Vec2 observed {Vec2::Zero()};
    int level {0};
  };

  BAProblem(std::vector<Pose> poses, std::vector<Vec3> points, std::vector<Factor> factors, double huber_delta)
      : _poses{std::move(poses)}, _points{std::move(points)}, _factors{std::move(factors)}, _huber{huber_delta} {
    _pose_var.assign(_poses.size(), -1);
    for (std::size_t i = 0; i < _poses.size(); ++i) {
      if (!_poses[i].fixed) {
        _pose_var[i] = _num_vars++;
      }
    }
    _point_factors.resize(_points.size());
    _var_factors.resize(static_cast<std::size_t>(_num_vars));
    for (std::size_t f = 0; f < _factors.size(); ++f) {
      const Factor& fa = _factors[f];
      _point_factors[static_cast<std::size_t>(fa.point)].push_back(static_cast<int>(f));
      const int var = _pose_var[static_cast<std::size_t>(fa.pose)];
      if (var >= 0) {
        _var_factors[static_cast<std::size_t>(var)].push_back(static_cast<int>(f));
      }
    }
  }

  const std::vector<Pose>& poses() const noexcept { return _poses; }
  const std::vector<Vec3>& points() const noexcept { return _points; }
  const std::vector<Factor>& factors() const noexcept { return _factors; }
  int num_pose_vars() const noexcept { return _num_vars; }
  int pose_var(std::size_t pose) const { return _pose_var[pose]; }

  std::vector<FactorLinearization> linearize(WorkerPool* pool = nullptr) const {
    std::vector<FactorLinearization> out(_factors.size());
    parallel_for(pool, _factors.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t f = begin; f < end; ++f) {
        const Factor& fa = _factors[f];
        const Pose& p = _poses[static_cast<std::size_t>(fa.pose)];
        out[f] = residual_and_jacobian(p.pose, p.intrinsics, _points[static_cast<std::size_t>(fa.point)],
                                       fa.observed, fa.level, _huber);
      }
    });
    return out;
  }

  /// Gauss-Newton blocks with Huber weights, summed in factor order.
  NormalEquations assemble(const std::vector<FactorLinearization>& lin, WorkerPool* pool = nullptr) const {
    NormalEquations neq;
    neq.h_pp.assign(static_cast<std::size_t>(_num_vars), Mat66::Zero());
    neq.b_p.assign(static_cast<std::size_t>(_num_vars), Vec6::Zero());
    neq.h_ll.assign(_points.size(), Mat33::Zero());
    neq.b_l.assign(_points.size(), Vec3::Zero());
    neq.h_pl.assign(_points.size(), {});

    parallel_for(pool, static_cast<std::size_t>(_num_vars), [&](std::size_t begin, std::size_t end) {
      for (std::size_t v = begin; v < end; ++v) {
        for (int f : _var_factors[v]) {
          const FactorLinearization& l = lin[static_cast<std::size_t>(f)];
          if (!l.active) {
            continue;
          }
          neq.h_pp[v] += l.weight * l.j_pose.transpose() * l.j_pose;
          neq.b_p[v] -= l.weight * l.j_pose.transpose() * l.residual;
        }
      }
    });
    parallel_for(pool, _points.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k) {
        for (int f : _point_factors[k]) {
          const FactorLinearization& l = lin[static_cast<std::size_t>(f)];
          if (!l.active) {
            continue;
          }
          neq.h_ll[k] += l.weight * l.j_point.transpose() * l.j_point;
          neq.b_l[k] -= l.weight * l.j_point.transpose() * l.residual;
          const int var = _pose_var[static_cast<std::size_t>(_factors[static_cast<std::size_t>(f)].pose)];
          if (var >= 0) {
            neq.h_pl[k].push_back({var, l.weight * l.j_pose.transpose() * l.j_point});
          }
        }
        std::sort(neq.h_pl[k].begin(), neq.h_pl[k].end(),
                  [](const Coupling& a, const Coupling& b) { return a.pose < b.pose; });
      }
    });
    return neq;
  }

  /// Robust cost; factors behind the camera contribute nothing.
  double cost(const std::vector<FactorLinearization>& lin) const {
    double total = 0.0;
    for (const FactorLinearization& l : lin) {
      if (l.active) {
        total += huber_cost(l.residual.norm(), _huber);
      }
    }
    return total;
  }

  int active_count(const std::vector<FactorLinearization>& lin) const {
    return static_cast<int>(std::count_if(lin.begin(), lin.end(), [](const auto& l) { return l.active; }));
  }

  void apply(const LMStep& step) {
    for (std::size_t i = 0; i < _poses.size(); ++i) {
      const int var = _pose_var[i];
      if (var >= 0) {
        _poses[i].pose = retract_right(_poses[i].pose, step.pose_delta.segment<6>(6 * var));
      }
    }
    for (std::size_t k = 0; k < _points.size(); ++k) {
      _points[k] += step.point_delta[k];
    }
  }

  private:

  std::vector<Pose> _poses;
  std::vector<Vec3> _points;
  std::vector<Factor> _factors;
  double _huber;
  std::vector<int> _pose_var;
  int _num_vars {0};
  std::vector<std::vector<int>> _point_factors;
  std::vector<std::vector<int>> _var_factors;
};

// ----------------------------------------------------------------------------
// Levenberg-Marquardt
// ----------------------------------------------------------------------------

enum class ConvergenceReason {
  kMaxIterations,
  kCostTolerance,
  kLambdaLimit,
  kZeroCost,
  kNoActiveFactors,
};

constexpr std::string_view to_string(ConvergenceReason r) {
  switch (r) {
    case ConvergenceReason::kMaxIterations: return "max-iterations";
    case ConvergenceReason::kCostTolerance: return "cost-tolerance";
    case ConvergenceReason::kLambdaLimit: return "lambda-limit";
    case ConvergenceReason::kZeroCost: return "zero-cost";
    case ConvergenceReason::kNoActiveFactors: return "no-active-factors";
  }
  return "unknown";
}

struct IterationRecord {
  double lambda {0.0};
  double cost {0.0};
  bool accepted {false};

  bool operator==(const IterationRecord&) const = default;
};

struct BAReport {
  int iterations {0};
  double initial_cost {0.0};
  double final_cost {0.0};
  std::vector<IterationRecord> history;
  ConvergenceReason reason {ConvergenceReason::kMaxIterations};
  int active_factors {0};
  int poses {0};
  int points {0};

  bool operator==(const BAReport&) const = default;
};

/// Levenberg-Marquardt with the Schur-reduced step. Rejected steps raise
/// lambda by lambda_up, accepted ones lower it by lambda_down.
inline BAReport optimize(BAProblem& problem, const BAConfig& cfg = {}, WorkerPool* pool = nullptr) {
  BAReport report;
  report.poses = problem.num_pose_vars();
  report.points = static_cast<int>(problem.points().size());

  std::vector<FactorLinearization> lin = problem.linearize(pool);
  report.active_factors = problem.active_count(lin);
  double cost = problem.cost(lin);
  report.initial_cost = cost;
  report.final_cost = cost;
  if (report.active_factors == 0) {
    report.reason = ConvergenceReason::kNoActiveFactors;
    return report;
  }
  if (cost <= cfg.cost_abs_tol) {
    report.reason = ConvergenceReason::kZeroCost;
    return report;
  }

  double lambda = cfg.lambda0;
  NormalEquations neq = problem.assemble(lin, pool);
  report.reason = ConvergenceReason::kMaxIterations;
  for (int it = 0; it < cfg.max_iters; ++it) {
    ++report.iterations;
    BAProblem candidate = problem;
    double new_cost = std::numeric_limits<double>::infinity();
    std::vector<FactorLinearization> new_lin;
    try {
      const LMStep step = solve_schur_step(neq, lambda, pool);
      candidate.apply(step);
      new_lin = candidate.linearize(pool);
      new_cost = candidate.cost(new_lin);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumerical) {
        throw;
      }
    }

    if (std::isfinite(new_cost) && new_cost < cost) {
      const double rel = (cost - new_cost) / cost;
      report.history.push_back({lambda, new_cost, true});
      problem = std::move(candidate);
      lin = std::move(new_lin);
      cost = new_cost;
      lambda = std::max(lambda / cfg.lambda_down, 1e-12);
      if (rel < cfg.cost_tol) {
        report.reason = ConvergenceReason::kCostTolerance;
        break;
      }
      if (cost <= cfg.cost_abs_tol) {
        report.reason = ConvergenceReason::kZeroCost;
        break;
      }
      neq = problem.assemble(lin, pool);
    } else {
      report.history.push_back({lambda, std::isfinite(new_cost) ? new_cost : cost, false});
      if (std::isfinite(new_cost) && std::abs(cost - new_cost) <= cfg.cost_tol * cost) {
        report.reason = ConvergenceReason::kCostTolerance;
        break;
      }
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_max) {
        report.reason = ConvergenceReason::kLambdaLimit;
        break;
      }
    }
  }
  report.final_cost = cost;
  return report;
}

/// Builds the index-form problem of a window from the map.
inline BAProblem make_problem(const Map& map, const BAWindow& window, const BAConfig& cfg = {}) {
  std::vector<BAProblem::Pose> poses;
  std::map<KeyFrameId, int> pose_index;
  for (KeyFrameId id : window.local_kf_ids) {
    const KeyFrame& kf = map.keyframe(id);
    pose_index[id] = static_cast<int>(poses.size());
    poses.push_back({kf.pose, kf.intrinsics, false});
  }
  for (KeyFrameId id : window.fixed_kf_ids) {
    const KeyFrame& kf = map.keyframe(id);
    pose_index[id] = static_cast<int>(poses.size());
    poses.push_back({kf.pose, kf.intrinsics, true});
  }
  std::vector<Vec3> points;
  std::map<MapPointId, int> point_index;
  for (MapPointId id : window.point_ids) {
    point_index[id] = static_cast<int>(points.size());
    points.push_back(map.point(id).position);
  }
  std::vector<BAProblem::Factor> factors;
  factors.reserve(window.factors.size());
  for (const BAFactor& f : window.factors) {
    factors.push_back({pose_index.at(f.kf_id), point_index.at(f.point_id), f.observed, f.level});
  }
  return BAProblem(std::move(poses), std::move(points), std::move(factors), cfg.huber_delta);
}

/// Optimizes the window and writes local poses and points back to the map.
inline BAReport lm_optimize(Map& map, const BAWindow& window, const BAConfig& cfg = {}, WorkerPool* pool = nullptr) {
  BAProblem problem = make_problem(map, window, cfg);
  BAReport report = optimize(problem, cfg, pool);
  for (std::size_t i = 0; i < window.local_kf_ids.size(); ++i) {
    map.set_keyframe_pose(window.local_kf_ids[i], problem.poses()[i].pose);
  }
  for (std::size_t k = 0; k < window.point_ids.size(); ++k) {
    if (map.point_alive(window.point_ids[k])) {
      map.set_point_position(window.point_ids[k], problem.points()[k]);
    }
  }
  return report;
}

}  // namespace lmap
