#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "lmap/error.hpp"

namespace lmap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ----------------------------------------------------------------------------
// SE3Pose
// ----------------------------------------------------------------------------

/// World-to-camera rigid transform (T_cw). The quaternion is renormalized
/// whenever a pose is built or composed.
struct SE3Pose {

  Eigen::Quaterniond rotation {Eigen::Quaterniond::Identity()};
  Vec3 translation {Vec3::Zero()};

  SE3Pose() = default;

  SE3Pose(const Eigen::Quaterniond& q, const Vec3& t) : rotation{q.normalized()}, translation{t} {}

  SE3Pose(const Mat3& r, const Vec3& t) : rotation{Eigen::Quaterniond(r).normalized()}, translation{t} {}

  static SE3Pose identity() { return {}; }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  Vec3 transform(const Vec3& x) const { return rotation * x + translation; }

  /// Camera center in world coordinates.
  Vec3 center() const { return -(rotation.conjugate() * translation); }

  SE3Pose inverse() const {
    const Eigen::Quaterniond qi = rotation.conjugate();
    return {qi, -(qi * translation)};
  }

  bool operator==(const SE3Pose& other) const {
    return rotation.coeffs() == other.rotation.coeffs() && translation == other.translation;
  }
};

/// Applies b first, then a.
inline SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline SE3Pose inverse(const SE3Pose& p) { return p.inverse(); }

inline Vec3 transform_point(const SE3Pose& p, const Vec3& x) { return p.transform(x); }

/// Rotation angle (rad) of the relative rotation between a and b.
inline double rotation_angle_between(const SE3Pose& a, const SE3Pose& b) {
  return a.rotation.angularDistance(b.rotation);
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// so(3) exponential map as a unit quaternion.
inline Eigen::Quaterniond exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-10) {
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, omega / theta));
}

/// Right perturbation used by the optimizer: rotation first, then
/// translation expressed in the pose's own frame.
///   R' = R * Exp(omega),  t' = t + R * v
inline SE3Pose retract_right(const SE3Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Vec3 omega = delta.head<3>();
  const Vec3 v = delta.tail<3>();
  return {pose.rotation * exp_so3(omega), pose.translation + pose.rotation * v};
}

// ----------------------------------------------------------------------------
// CameraIntrinsics
// ----------------------------------------------------------------------------

struct CameraIntrinsics {

  double fx {458.0};
  double fy {458.0};
  double cx {376.0};
  double cy {240.0};
  int width {752};
  int height {480};
  int num_levels {8};
  double scale_factor {1.2};

  void validate() const {
    require(fx > 0.0 && fy > 0.0, ErrorCode::kInvalidArgument, "focal lengths must be positive");
    require(cx >= 0.0 && cx < width, ErrorCode::kInvalidArgument, "cx outside image");
    require(cy >= 0.0 && cy < height, ErrorCode::kInvalidArgument, "cy outside image");
    require(num_levels >= 1, ErrorCode::kInvalidArgument, "num_levels must be >= 1");
    require(scale_factor > 1.0, ErrorCode::kInvalidArgument, "scale_factor must exceed 1");
  }

  double level_scale(int level) const { return std::pow(scale_factor, level); }

  double level_sigma2(int level) const { return std::pow(scale_factor, 2 * level); }

  bool in_image(const Vec2& px) const {
    return px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height;
  }

  /// Pinhole formula with no visibility test.
  Vec2 project_unchecked(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  /// Empty when behind the camera or outside the image.
  std::optional<Vec2> project(const Vec3& p_cam) const {
    if (!(p_cam.z() > 0.0)) {
      return std::nullopt;
    }
    Vec2 px = project_unchecked(p_cam);
    if (!in_image(px)) {
      return std::nullopt;
    }
    return px;
  }

  Vec3 unproject(const Vec2& px) const {
    return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  Mat3 inverse_matrix() const {
    Mat3 k;
    k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return k;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

inline std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& p_cam) {
  return k.project(p_cam);
}

// ----------------------------------------------------------------------------
// KeyPoint / BinaryDescriptor
// ----------------------------------------------------------------------------

struct KeyPoint {
  double u {0.0};
  double v {0.0};
  int level {0};
  int descriptor_index {0};

  Vec2 pixel() const { return {u, v}; }

  bool operator==(const KeyPoint&) const = default;
};

/// 256-bit binary descriptor stored as four 64-bit words.
struct BinaryDescriptor {

  static constexpr int kBits = 256;
  static constexpr int kBytes = 32;

  std::array<std::uint64_t, 4> words {0, 0, 0, 0};

  bool bit(int i) const { return (words[i / 64] >> (i % 64)) & 1u; }

  void flip(int i) { words[i / 64] ^= (std::uint64_t{1} << (i % 64)); }

  static BinaryDescriptor ones() {
    BinaryDescriptor d;
    d.words.fill(~std::uint64_t{0});
    return d;
  }

  std::string to_hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(64, '0');
    for (int w = 0; w < 4; ++w) {
      for (int n = 0; n < 16; ++n) {
        out[w * 16 + n] = kDigits[(words[w] >> (60 - 4 * n)) & 0xF];
      }
    }
    return out;
  }

  static BinaryDescriptor from_hex(std::string_view hex) {
    require(hex.size() == 64, ErrorCode::kParse, "descriptor hex must have 64 digits");
    BinaryDescriptor d;
    for (int w = 0; w < 4; ++w) {
      std::uint64_t word = 0;
      for (int n = 0; n < 16; ++n) {
        const char c = hex[w * 16 + n];
        std::uint64_t nibble = 0;
        if (c >= '0' && c <= '9') {
          nibble = static_cast<std::uint64_t>(c - '0');
        } else if (c >= 'a' && c <= 'f') {
          nibble = static_cast<std::uint64_t>(c - 'a' + 10);
        } else if (c >= 'A' && c <= 'F') {
          nibble = static_cast<std::uint64_t>(c - 'A' + 10);
        } else {
          fail(ErrorCode::kParse, "invalid hex digit in descriptor");
        }
        word = (word << 4) | nibble;
      }
      d.words[w] = word;
    }
    return d;
  }

  bool operator==(const BinaryDescriptor&) const = default;
};

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  return std::popcount(a.words[0] ^ b.words[0]) + std::popcount(a.words[1] ^ b.words[1]) +
         std::popcount(a.words[2] ^ b.words[2]) + std::popcount(a.words[3] ^ b.words[3]);
}

// ----------------------------------------------------------------------------
// Two-view geometry
// ----------------------------------------------------------------------------

inline constexpr double kMinBaseline = 1e-9;

/// Homogeneous DLT on normalized image coordinates; the solution is the
/// right singular vector of the smallest singular value.
inline Vec3 triangulate(const SE3Pose& pose_a, const SE3Pose& pose_b,
                        const CameraIntrinsics& k_a, const CameraIntrinsics& k_b,
                        const Vec2& pix_a, const Vec2& pix_b) {
  if ((pose_a.center() - pose_b.center()).norm() < kMinBaseline) {
    fail(ErrorCode::kDegenerateGeometry, "triangulation baseline below 1e-9 m");
  }
  const Vec3 xa = k_a.unproject(pix_a);
  const Vec3 xb = k_b.unproject(pix_b);

  Eigen::Matrix<double, 3, 4> pa;
  pa.leftCols<3>() = pose_a.rotation_matrix();
  pa.col(3) = pose_a.translation;
  Eigen::Matrix<double, 3, 4> pb;
  pb.leftCols<3>() = pose_b.rotation_matrix();
  pb.col(3) = pose_b.translation;

  Eigen::Matrix4d a;
  a.row(0) = xa.x() * pa.row(2) - pa.row(0);
  a.row(1) = xa.y() * pa.row(2) - pa.row(1);
  a.row(2) = xb.x() * pb.row(2) - pb.row(0);
  a.row(3) = xb.y() * pb.row(2) - pb.row(1);

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12) {
    fail(ErrorCode::kDegenerateGeometry, "triangulated point at infinity");
  }
  return h.head<3>() / h(3);
}

/// Fundamental matrix mapping pixels in view a to epipolar lines in view b.
inline Mat3 fundamental_matrix(const SE3Pose& pose_a, const SE3Pose& pose_b,
                               const CameraIntrinsics& k_a, const CameraIntrinsics& k_b) {
  const Mat3 r_ba = pose_b.rotation_matrix() * pose_a.rotation_matrix().transpose();
  const Vec3 t_ba = pose_b.translation - r_ba * pose_a.translation;
  if (t_ba.norm() < kMinBaseline) {
    fail(ErrorCode::kDegenerateGeometry, "epipolar geometry needs a nonzero baseline");
  }
  return k_b.inverse_matrix().transpose() * skew(t_ba) * r_ba * k_a.inverse_matrix();
}

/// Squared pixel distance from pix_b to the epipolar line F * pix_a.
inline double epipolar_error(const Mat3& f, const Vec2& pix_a, const Vec2& pix_b) {
  const Vec3 line = f * pix_a.homogeneous();
  const double num = line.dot(pix_b.homogeneous());
  const double den = line.x() * line.x() + line.y() * line.y();
  if (den <= 0.0) {
    fail(ErrorCode::kDegenerateGeometry, "pixel maps to the epipole");
  }
  return num * num / den;
}

inline double epipolar_error(const SE3Pose& pose_a, const SE3Pose& pose_b,
                             const CameraIntrinsics& k_a, const CameraIntrinsics& k_b,
                             const Vec2& pix_a, const Vec2& pix_b) {
  return epipolar_error(fundamental_matrix(pose_a, pose_b, k_a, k_b), pix_a, pix_b);
}

/// Cosine of the angle at `point` between the rays to the two centers.
inline double parallax_cosine(const Vec3& point, const Vec3& center_a, const Vec3& center_b) {
  const Vec3 ra = point - center_a;
  const Vec3 rb = point - center_b;
  const double na = ra.norm();
  const double nb = rb.norm();
  if (na < 1e-12 || nb < 1e-12) {
    fail(ErrorCode::kDegenerateGeometry, "point coincides with a camera center");
  }
  return std::clamp(ra.dot(rb) / (na * nb), -1.0, 1.0);
}

// ----------------------------------------------------------------------------
// Map-point creation gates
// ----------------------------------------------------------------------------

struct CreationGateConfig {
  double cos_parallax_max {0.9998};
  double chi2_mono {5.991};
  double scale_ratio_slack {1.5};
};

enum class GateResult {
  kPass,
  kParallax,
  kPositiveDepth,
  kReprojection,
  kScaleConsistency,
};

constexpr std::string_view to_string(GateResult r) {
  switch (r) {
    case GateResult::kPass: return "pass";
    case GateResult::kParallax: return "parallax";
    case GateResult::kPositiveDepth: return "positive-depth";
    case GateResult::kReprojection: return "reprojection";
    case GateResult::kScaleConsistency: return "scale-consistency";
  }
  return "unknown";
}

struct ViewObservation {
  const SE3Pose& pose;
  const CameraIntrinsics& intrinsics;
  Vec2 pixel;
  int level;
};

/// Gates are checked in order: parallax, depth, reprojection, scale.
inline GateResult check_creation_gates(const ViewObservation& a, const ViewObservation& b,
                                       const Vec3& candidate, const CreationGateConfig& cfg = {}) {
  const Vec3 center_a = a.pose.center();
  const Vec3 center_b = b.pose.center();
  const double dist_a = (candidate - center_a).norm();
  const double dist_b = (candidate - center_b).norm();
  if (dist_a < 1e-12 || dist_b < 1e-12) {
    return GateResult::kParallax;
  }
  if (parallax_cosine(candidate, center_a, center_b) >= cfg.cos_parallax_max) {
    return GateResult::kParallax;
  }

  const Vec3 pa = a.pose.transform(candidate);
  const Vec3 pb = b.pose.transform(candidate);
  if (!(pa.z() > 0.0) || !(pb.z() > 0.0)) {
    return GateResult::kPositiveDepth;
  }

  const double err_a = (a.intrinsics.project_unchecked(pa) - a.pixel).squaredNorm();
  const double err_b = (b.intrinsics.project_unchecked(pb) - b.pixel).squaredNorm();
  if (err_a > cfg.chi2_mono * a.intrinsics.level_sigma2(a.level) ||
      err_b > cfg.chi2_mono * b.intrinsics.level_sigma2(b.level)) {
    return GateResult::kReprojection;
  }

  // Distance grows with pyramid level (coarser levels hold farther points),
  // so the distance ratio must track the level-scale ratio.
  const double ratio_dist = dist_a / dist_b;
  const double ratio_octave = a.intrinsics.level_scale(a.level) / b.intrinsics.level_scale(b.level);
  const double r = cfg.scale_ratio_slack * a.intrinsics.scale_factor;
  if (ratio_dist * r < ratio_octave || ratio_dist > ratio_octave * r) {
    return GateResult::kScaleConsistency;
  }
  return GateResult::kPass;
}

}  // namespace lmap
