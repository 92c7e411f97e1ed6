#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "lmap/error.hpp"
#include "lmap/geometry.hpp"

namespace lmap {

// Camera-to-world pose with its timestamp, as stored in TUM trajectory files.
struct StampedPose {
  double timestamp {0.0};
  Vec3 position {Vec3::Zero()};
  Eigen::Quaterniond orientation {Eigen::Quaterniond::Identity()};
};

using Trajectory = std::vector<StampedPose>;

/// Converts a world-to-camera pose.
inline StampedPose stamped_from_world_to_camera(double timestamp, const SE3Pose& t_cw) {
  const SE3Pose t_wc = t_cw.inverse();
  return {timestamp, t_wc.translation, t_wc.rotation};
}

// ----------------------------------------------------------------------------
// TUM format: `timestamp tx ty tz qx qy qz qw`
// ----------------------------------------------------------------------------

inline void write_tum(std::ostream& os, const Trajectory& traj) {
  os << std::setprecision(17);
  for (const StampedPose& p : traj) {
    const auto v = [](double x) { return x == 0.0 ? 0.0 : x; };  // no "-0"
    os << p.timestamp << ' ' << v(p.position.x()) << ' ' << v(p.position.y()) << ' ' << v(p.position.z()) << ' '
       << v(p.orientation.x()) << ' ' << v(p.orientation.y()) << ' ' << v(p.orientation.z()) << ' '
       << v(p.orientation.w()) << '\n';
  }
}

inline void write_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::kInvalidArgument, "cannot open '" + path + "' for writing");
  write_tum(os, traj);
}

/// Blank lines and lines starting with '#' are skipped; commas are accepted
/// as separators.
inline Trajectory read_tum(std::istream& is) {
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    for (char& c : line) {
      if (c == ',') {
        c = ' ';
      }
    }
    std::istringstream fields(line);
    double v[8];
    for (double& x : v) {
      if (!(fields >> x)) {
        fail(ErrorCode::kParse, "trajectory line " + std::to_string(line_no) + ": expected 8 numbers");
      }
    }
    std::string extra;
    require(!(fields >> extra), ErrorCode::kParse,
            "trajectory line " + std::to_string(line_no) + ": trailing fields");
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    require(std::isfinite(q.norm()) && q.norm() > 1e-12, ErrorCode::kParse,
            "trajectory line " + std::to_string(line_no) + ": invalid quaternion");
    q.normalize();
    traj.push_back({v[0], Vec3(v[1], v[2], v[3]), q});
  }
  return traj;
}

inline Trajectory read_tum(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::kInvalidArgument, "cannot open trajectory '" + path + "'");
  return read_tum(is);
}

/// Pairs poses with equal timestamps (within tol). Keeps estimate order.
inline std::pair<Trajectory, Trajectory> associate(const Trajectory& est, const Trajectory& gt, double tol = 1e-6) {
  std::map<double, std::size_t> by_time;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    by_time.emplace(gt[i].timestamp, i);
  }
  std::pair<Trajectory, Trajectory> out;
  for (const StampedPose& p : est) {
    auto it = by_time.lower_bound(p.timestamp - tol);
    if (it != by_time.end() && std::abs(it->first - p.timestamp) <= tol) {
      out.first.push_back(p);
      out.second.push_back(gt[it->second]);
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// ATE
// ----------------------------------------------------------------------------

struct AteResult {
  double rmse {0.0};
  double scale {1.0};
  Eigen::Matrix4d alignment {Eigen::Matrix4d::Identity()};
  std::size_t poses {0};
};

/// Closed-form least-squares alignment of the estimated positions onto the
/// ground truth (rigid, or similarity with align_scale), then RMSE of the
/// remaining position residuals. Trajectories are paired by index.
inline AteResult ate(const Trajectory& estimated, const Trajectory& ground_truth, bool align_scale = false) {
  require(estimated.size() == ground_truth.size(), ErrorCode::kInvalidArgument,
          "trajectories differ in length (" + std::to_string(estimated.size()) + " vs " +
              std::to_string(ground_truth.size()) + ")");
  require(estimated.size() >= 3, ErrorCode::kInsufficientData, "ATE needs at least 3 poses");
  const auto n = static_cast<Eigen::Index>(estimated.size());
  Eigen::Matrix3Xd src(3, n);
  Eigen::Matrix3Xd dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimated[static_cast<std::size_t>(i)].position;
    dst.col(i) = ground_truth[static_cast<std::size_t>(i)].position;
  }
  AteResult out;
  out.alignment = Eigen::umeyama(src, dst, align_scale);
  out.scale = align_scale ? out.alignment.block<3, 1>(0, 0).norm() : 1.0;
  const Eigen::Matrix3Xd aligned = (out.alignment.topLeftCorner<3, 3>() * src).colwise() +
                                   out.alignment.topRightCorner<3, 1>();
  out.rmse = std::sqrt((aligned - dst).colwise().squaredNorm().mean());
  out.poses = estimated.size();
  return out;
}

inline double ate_rmse(const Trajectory& estimated, const Trajectory& ground_truth, bool align_scale = false) {
  return ate(estimated, ground_truth, align_scale).rmse;
}

}  // namespace lmap
