#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "lmap/error.hpp"
#include "lmap/geometry.hpp"
#include "lmap/map.hpp"

namespace lmap {

enum class TrajectoryKind { kLine, kOrbit, kCorridorLoop };

constexpr std::string_view to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kLine: return "line";
    case TrajectoryKind::kOrbit: return "orbit";
    case TrajectoryKind::kCorridorLoop: return "corridor-loop";
  }
  return "line";
}

inline TrajectoryKind trajectory_kind_from_string(std::string_view s) {
  if (s == "line") return TrajectoryKind::kLine;
  if (s == "orbit") return TrajectoryKind::kOrbit;
  if (s == "corridor-loop") return TrajectoryKind::kCorridorLoop;
  fail(ErrorCode::kInvalidArgument, "unknown trajectory kind '" + std::string(s) + "'");
}

struct WorldConfig {
  std::uint64_t seed {42};
  int landmark_count {1500};
  double world_extent {4.0};
  TrajectoryKind trajectory {TrajectoryKind::kLine};
  int keyframe_count {50};
  int features_per_kf {0};  // 0: keep every visible landmark
  double pixel_noise_sigma {0.0};
  int descriptor_flip_bits {4};
  double spurious_feature_fraction {0.0};
  double duplicate_injection_rate {0.0};

  double kf_spacing {0.15};
  double timestamp_step {0.1};
  double level_base_distance {2.0};
  double init_rotation_sigma {0.002};
  double init_translation_sigma {0.01};
  int duplicate_flip_bits {40};
  int min_covisible {30};
  int max_retries {8};

  void validate() const {
    require(landmark_count > 0, ErrorCode::kInvalidArgument, "landmark_count must be positive");
    require(keyframe_count > 0, ErrorCode::kInvalidArgument, "keyframe_count must be positive");
    require(world_extent > 0.0, ErrorCode::kInvalidArgument, "world_extent must be positive");
    require(features_per_kf >= 0, ErrorCode::kInvalidArgument, "features_per_kf must be >= 0");
    require(pixel_noise_sigma >= 0.0, ErrorCode::kInvalidArgument, "pixel_noise_sigma must be >= 0");
    require(descriptor_flip_bits >= 0 && descriptor_flip_bits <= 256, ErrorCode::kInvalidArgument,
            "descriptor_flip_bits out of range");
    require(duplicate_flip_bits >= 0 && duplicate_flip_bits <= 256, ErrorCode::kInvalidArgument,
            "duplicate_flip_bits out of range");
    require(spurious_feature_fraction >= 0.0 && spurious_feature_fraction < 1.0, ErrorCode::kInvalidArgument,
            "spurious_feature_fraction must be in [0, 1)");
    require(duplicate_injection_rate >= 0.0 && duplicate_injection_rate <= 1.0, ErrorCode::kInvalidArgument,
            "duplicate_injection_rate must be in [0, 1]");
    require(kf_spacing > 0.0 && timestamp_step > 0.0 && level_base_distance > 0.0, ErrorCode::kInvalidArgument,
            "spacing, timestamp step and level base distance must be positive");
    require(max_retries >= 1, ErrorCode::kInvalidArgument, "max_retries must be >= 1");
  }
};

struct SequenceKeyFrame {
  KeyFrameId id {0};
  double timestamp {0.0};
  SE3Pose pose_init;
  std::vector<KeyPoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;
};

// Held out from the pipeline; only oracles and evaluation read it.
struct GroundTruthKeyFrame {
  KeyFrameId id {0};
  SE3Pose pose;
  std::vector<std::int64_t> landmark_ids;  // -1 for spurious keypoints
};

struct DuplicatePair {
  std::int64_t original {0};
  std::int64_t twin {0};
  bool operator==(const DuplicatePair&) const = default;
};

struct Sequence {
  WorldConfig config;
  CameraIntrinsics intrinsics;
  std::vector<SequenceKeyFrame> keyframes;
  std::vector<GroundTruthKeyFrame> ground_truth;
  std::vector<Vec3> landmarks;  // index = landmark id, twins included
  std::vector<DuplicatePair> duplicates;

  KeyFrame to_keyframe(std::size_t k) const {
    const SequenceKeyFrame& s = keyframes.at(k);
    KeyFrame kf;
    kf.id = s.id;
    kf.timestamp = s.timestamp;
    kf.pose = s.pose_init;
    kf.intrinsics = intrinsics;
    kf.keypoints = s.keypoints;
    kf.descriptors = s.descriptors;
    return kf;
  }
};

// ----------------------------------------------------------------------------
// Generator
// ----------------------------------------------------------------------------

namespace detail {

// Camera looking along `forward` with image y pointing along `down`.
inline SE3Pose look_along(const Vec3& center, const Vec3& forward, const Vec3& down) {
  const Vec3 z = forward.normalized();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  const Mat3 r_cw = r_wc.transpose();
  return SE3Pose(Eigen::Quaterniond(r_cw), -r_cw * center);
}

inline std::vector<SE3Pose> make_trajectory(const WorldConfig& cfg) {
  std::vector<SE3Pose> poses;
  const Vec3 down(0.0, 1.0, 0.0);
  const int n = cfg.keyframe_count;
  for (int k = 0; k < n; ++k) {
    switch (cfg.trajectory) {
      case TrajectoryKind::kLine:
        poses.push_back(look_along(Vec3(k * cfg.kf_spacing, 0.0, 0.0), Vec3::UnitZ(), down));
        break;
      case TrajectoryKind::kOrbit: {
        // Arc length per keyframe equals kf_spacing.
        const double theta = k * cfg.kf_spacing / cfg.world_extent;
        const Vec3 c(cfg.world_extent * std::sin(theta), 0.0, -cfg.world_extent * std::cos(theta));
        poses.push_back(look_along(c, -c, down));
        break;
      }
      case TrajectoryKind::kCorridorLoop: {
        const double a = 2.0 * cfg.world_extent;
        const double b = cfg.world_extent;
        const double theta = 2.0 * std::numbers::pi * k / n;
        const Vec3 c(a * std::cos(theta), 0.0, b * std::sin(theta));
        const Vec3 outward(b * std::cos(theta), 0.0, a * std::sin(theta));
        poses.push_back(look_along(c, outward, down));
        break;
      }
    }
  }
  return poses;
}

template <typename Rng>
Vec3 sample_landmark(const WorldConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double e = cfg.world_extent;
  switch (cfg.trajectory) {
    case TrajectoryKind::kLine: {
      const double length = (cfg.keyframe_count - 1) * cfg.kf_spacing;
      const double x = -0.6 * e + unit(rng) * (length + 1.2 * e);
      const double y = (unit(rng) - 0.5) * 0.8 * e;
      const double z = 2.5 + unit(rng) * e;
      return {x, y, z};
    }
    case TrajectoryKind::kOrbit: {
      const double h = 0.45 * e;
      return {(2.0 * unit(rng) - 1.0) * h, (2.0 * unit(rng) - 1.0) * 0.5 * h, (2.0 * unit(rng) - 1.0) * h};
    }
    case TrajectoryKind::kCorridorLoop: {
      const double a = 2.0 * e;
      const double b = e;
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const Vec3 c(a * std::cos(theta), 0.0, b * std::sin(theta));
      const Vec3 outward = Vec3(b * std::cos(theta), 0.0, a * std::sin(theta)).normalized();
      const double depth = 2.5 + unit(rng) * 0.5 * e;
      const double y = (unit(rng) - 0.5) * 2.4;
      return c + depth * outward + Vec3(0.0, y, 0.0);
    }
  }
  return Vec3::Zero();
}

template <typename Rng>
BinaryDescriptor random_descriptor(Rng& rng) {
  BinaryDescriptor d;
  for (auto& w : d.words) {
    w = rng();
  }
  return d;
}

template <typename Rng>
BinaryDescriptor flip_random_bits(BinaryDescriptor d, int count, Rng& rng) {
  std::uniform_int_distribution<int> bit(0, BinaryDescriptor::kBits - 1);
  BinaryDescriptor mask;
  int flipped = 0;
  while (flipped < count) {
    const int b = bit(rng);
    if (!mask.bit(b)) {
      mask.flip(b);
      ++flipped;
    }
  }
  for (std::size_t i = 0; i < d.words.size(); ++i) {
    d.words[i] ^= mask.words[i];
  }
  return d;
}

inline int level_for_distance(double d, const WorldConfig& cfg, const CameraIntrinsics& k) {
  const int level = static_cast<int>(std::floor(std::log(d / cfg.level_base_distance) / std::log(k.scale_factor)));
  return std::clamp(level, 0, k.num_levels - 1);
}

struct Attempt {
  Sequence seq;
  int worst_kf {-1};
  int worst_shared {0};
};

inline Attempt generate_attempt(const WorldConfig& cfg, const CameraIntrinsics& intr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Attempt out;
  Sequence& seq = out.seq;
  seq.config = cfg;
  seq.intrinsics = intr;

  const std::vector<SE3Pose> poses = make_trajectory(cfg);
  const int n = cfg.landmark_count;
  std::vector<BinaryDescriptor> base;
  for (int i = 0; i < n; ++i) {
    seq.landmarks.push_back(sample_landmark(cfg, rng));
    base.push_back(random_descriptor(rng));
  }

  // Twins share the position and carry a heavily perturbed descriptor.
  const int dup_count = static_cast<int>(std::lround(cfg.duplicate_injection_rate * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    order[static_cast<std::size_t>(i)] = i;
  }
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::int64_t> twin_of(static_cast<std::size_t>(n), -1);
  for (int d = 0; d < dup_count; ++d) {
    const int orig = order[static_cast<std::size_t>(d)];
    const std::int64_t twin = static_cast<std::int64_t>(seq.landmarks.size());
    seq.landmarks.push_back(seq.landmarks[static_cast<std::size_t>(orig)]);
    base.push_back(flip_random_bits(base[static_cast<std::size_t>(orig)], cfg.duplicate_flip_bits, rng));
    twin_of[static_cast<std::size_t>(orig)] = twin;
  }
  std::sort(order.begin(), order.begin() + dup_count);
  for (int d = 0; d < dup_count; ++d) {
    const int orig = order[static_cast<std::size_t>(d)];
    seq.duplicates.push_back({orig, twin_of[static_cast<std::size_t>(orig)]});
  }

  // Visibility of original landmarks per keyframe, after the feature cap.
  std::vector<std::vector<int>> visible(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    for (int i = 0; i < n; ++i) {
      const Vec3 pc = poses[k].transform(seq.landmarks[static_cast<std::size_t>(i)]);
      if (pc.z() > 0.1 && intr.project(pc)) {
        visible[k].push_back(i);
      }
    }
    if (cfg.features_per_kf > 0 && visible[k].size() > static_cast<std::size_t>(cfg.features_per_kf)) {
      std::shuffle(visible[k].begin(), visible[k].end(), rng);
      visible[k].resize(static_cast<std::size_t>(cfg.features_per_kf));
      std::sort(visible[k].begin(), visible[k].end());
    }
  }

  // Observers before the median keep the original, later ones see the twin.
  std::vector<std::vector<std::size_t>> observers(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < poses.size(); ++k) {
    for (int i : visible[k]) {
      if (twin_of[static_cast<std::size_t>(i)] >= 0) {
        observers[static_cast<std::size_t>(i)].push_back(k);
      }
    }
  }
  auto emitted_id = [&](int i, std::size_t k) -> std::int64_t {
    const std::int64_t twin = twin_of[static_cast<std::size_t>(i)];
    if (twin < 0) {
      return i;
    }
    const auto& obs = observers[static_cast<std::size_t>(i)];
    const auto pos = static_cast<std::size_t>(std::lower_bound(obs.begin(), obs.end(), k) - obs.begin());
    return pos < obs.size() / 2 ? i : twin;
  };

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> level_dist(0, intr.num_levels - 1);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    SequenceKeyFrame skf;
    GroundTruthKeyFrame gt;
    skf.id = static_cast<KeyFrameId>(k);
    skf.timestamp = static_cast<double>(k) * cfg.timestamp_step;
    gt.id = skf.id;
    gt.pose = poses[k];

    struct Feature {
      KeyPoint kp;
      BinaryDescriptor desc;
      std::int64_t landmark;
    };
    std::vector<Feature> feats;
    for (int i : visible[k]) {
      const std::int64_t lid = emitted_id(i, k);
      const Vec3 pc = poses[k].transform(seq.landmarks[static_cast<std::size_t>(lid)]);
      const int level = level_for_distance(pc.norm(), cfg, intr);
      Vec2 px = intr.project_unchecked(pc);
      if (cfg.pixel_noise_sigma > 0.0) {
        px += cfg.pixel_noise_sigma * Vec2(noise(rng), noise(rng));
      }
      const BinaryDescriptor desc = flip_random_bits(base[static_cast<std::size_t>(lid)], cfg.descriptor_flip_bits, rng);
      if (!intr.in_image(px)) {
        continue;
      }
      feats.push_back({KeyPoint{px.x(), px.y(), level, 0}, desc, lid});
    }
    const auto real = feats.size();
    const auto spurious = static_cast<std::size_t>(std::lround(cfg.spurious_feature_fraction * static_cast<double>(real)));
    for (std::size_t s = 0; s < spurious; ++s) {
      const double u = unit(rng) * intr.width;
      const double v = unit(rng) * intr.height;
      feats.push_back({KeyPoint{u, v, level_dist(rng), 0}, random_descriptor(rng), -1});
    }
    std::shuffle(feats.begin(), feats.end(), rng);
    for (std::size_t f = 0; f < feats.size(); ++f) {
      KeyPoint kp = feats[f].kp;
      kp.descriptor_index = static_cast<int>(f);
      skf.keypoints.push_back(kp);
      skf.descriptors.push_back(feats[f].desc);
      gt.landmark_ids.push_back(feats[f].landmark);
    }

    // The first two keyframes start exact; later ones get a tracking-like
    // initial error.
    if (k < 2) {
      skf.pose_init = poses[k];
    } else {
      Eigen::Matrix<double, 6, 1> delta;
      for (int j = 0; j < 3; ++j) {
        delta(j) = cfg.init_rotation_sigma * gauss(rng);
      }
      for (int j = 3; j < 6; ++j) {
        delta(j) = cfg.init_translation_sigma * gauss(rng);
      }
      skf.pose_init = retract_right(poses[k], delta);
    }
    seq.keyframes.push_back(std::move(skf));
    seq.ground_truth.push_back(std::move(gt));
  }

  out.worst_shared = 1 << 30;
  for (std::size_t k = 1; k < seq.ground_truth.size(); ++k) {
    std::vector<std::int64_t> a = seq.ground_truth[k - 1].landmark_ids;
    std::vector<std::int64_t> b = seq.ground_truth[k].landmark_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::int64_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    const int shared = static_cast<int>(std::count_if(both.begin(), both.end(), [](std::int64_t id) { return id >= 0; }));
    if (shared < out.worst_shared) {
      out.worst_shared = shared;
      out.worst_kf = static_cast<int>(k);
    }
  }
  if (seq.ground_truth.size() < 2) {
    out.worst_shared = cfg.min_covisible;
  }
  return out;
}

}  // namespace detail

/// Deterministic synthetic sequence. Landmark placement is redrawn (bounded
/// by max_retries) until every keyframe shares min_covisible landmarks with
/// its predecessor.
inline Sequence generate_sequence(const WorldConfig& cfg, const CameraIntrinsics& intrinsics = {}) {
  cfg.validate();
  intrinsics.validate();
  std::string diagnostics;
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const std::uint64_t seed = cfg.seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(attempt);
    detail::Attempt a = detail::generate_attempt(cfg, intrinsics, seed);
    if (a.worst_shared >= cfg.min_covisible) {
      return std::move(a.seq);
    }
    diagnostics += " attempt " + std::to_string(attempt) + ": keyframe " + std::to_string(a.worst_kf) + " shares " +
                   std::to_string(a.worst_shared) + " landmarks;";
  }
  fail(ErrorCode::kGenerationFailed, "covisibility requirement of " + std::to_string(cfg.min_covisible) +
                                         " shared landmarks not met:" + diagnostics);
}

// ----------------------------------------------------------------------------
// Sequence file (one JSON object per line)
// ----------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline json pose_to_json(const SE3Pose& p) {
  return json::array({p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.x(), p.rotation.y(),
                      p.rotation.z(), p.rotation.w()});
}

inline SE3Pose pose_from_json(const json& j) {
  require(j.is_array() && j.size() == 7, ErrorCode::kParse, "pose must be [tx, ty, tz, qx, qy, qz, qw]");
  const Eigen::Quaterniond q(j[6].get<double>(), j[3].get<double>(), j[4].get<double>(), j[5].get<double>());
  require(q.norm() > 0.0, ErrorCode::kParse, "zero quaternion");
  return SE3Pose(q, Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>()));
}

inline json world_config_to_json(const WorldConfig& c) {
  return json{{"seed", c.seed},
              {"landmark_count", c.landmark_count},
              {"world_extent", c.world_extent},
              {"trajectory", std::string(to_string(c.trajectory))},
              {"keyframe_count", c.keyframe_count},
              {"features_per_kf", c.features_per_kf},
              {"pixel_noise_sigma", c.pixel_noise_sigma},
              {"descriptor_flip_bits", c.descriptor_flip_bits},
              {"spurious_feature_fraction", c.spurious_feature_fraction},
              {"duplicate_injection_rate", c.duplicate_injection_rate},
              {"kf_spacing", c.kf_spacing},
              {"timestamp_step", c.timestamp_step},
              {"level_base_distance", c.level_base_distance},
              {"init_rotation_sigma", c.init_rotation_sigma},
              {"init_translation_sigma", c.init_translation_sigma},
              {"duplicate_flip_bits", c.duplicate_flip_bits},
              {"min_covisible", c.min_covisible},
              {"max_retries", c.max_retries}};
}

inline WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  c.seed = j.value("seed", c.seed);
  c.landmark_count = j.value("landmark_count", c.landmark_count);
  c.world_extent = j.value("world_extent", c.world_extent);
  c.trajectory = trajectory_kind_from_string(j.value("trajectory", std::string("line")));
  c.keyframe_count = j.value("keyframe_count", c.keyframe_count);
  c.features_per_kf = j.value("features_per_kf", c.features_per_kf);
  c.pixel_noise_sigma = j.value("pixel_noise_sigma", c.pixel_noise_sigma);
  c.descriptor_flip_bits = j.value("descriptor_flip_bits", c.descriptor_flip_bits);
  c.spurious_feature_fraction = j.value("spurious_feature_fraction", c.spurious_feature_fraction);
  c.duplicate_injection_rate = j.value("duplicate_injection_rate", c.duplicate_injection_rate);
  c.kf_spacing = j.value("kf_spacing", c.kf_spacing);
  c.timestamp_step = j.value("timestamp_step", c.timestamp_step);
  c.level_base_distance = j.value("level_base_distance", c.level_base_distance);
  c.init_rotation_sigma = j.value("init_rotation_sigma", c.init_rotation_sigma);
  c.init_translation_sigma = j.value("init_translation_sigma", c.init_translation_sigma);
  c.duplicate_flip_bits = j.value("duplicate_flip_bits", c.duplicate_flip_bits);
  c.min_covisible = j.value("min_covisible", c.min_covisible);
  c.max_retries = j.value("max_retries", c.max_retries);
  return c;
}

inline json intrinsics_to_json(const CameraIntrinsics& k) {
  return json{{"fx", k.fx},         {"fy", k.fy},         {"cx", k.cx},
              {"cy", k.cy},         {"width", k.width},   {"height", k.height},
              {"num_levels", k.num_levels}, {"scale_factor", k.scale_factor}};
}

inline CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.num_levels = j.at("num_levels").get<int>();
  k.scale_factor = j.at("scale_factor").get<double>();
  k.validate();
  return k;
}

}  // namespace detail

inline void write_sequence(std::ostream& os, const Sequence& seq) {
  using detail::json;
  os << json{{"type", "header"},
             {"config", detail::world_config_to_json(seq.config)},
             {"intrinsics", detail::intrinsics_to_json(seq.intrinsics)},
             {"keyframe_count", seq.keyframes.size()}}
            .dump()
     << '\n';
  for (const SequenceKeyFrame& kf : seq.keyframes) {
    json kps = json::array();
    json descs = json::array();
    for (const KeyPoint& kp : kf.keypoints) {
      kps.push_back(json::array({kp.u, kp.v, kp.level}));
      descs.push_back(kf.descriptors[static_cast<std::size_t>(kp.descriptor_index)].to_hex());
    }
    os << json{{"type", "keyframe"},
               {"id", kf.id},
               {"timestamp", kf.timestamp},
               {"pose_init", detail::pose_to_json(kf.pose_init)},
               {"keypoints", std::move(kps)},
               {"descriptors", std::move(descs)}}
              .dump()
       << '\n';
  }
  for (const GroundTruthKeyFrame& gt : seq.ground_truth) {
    os << json{{"type", "ground_truth"},
               {"id", gt.id},
               {"pose", detail::pose_to_json(gt.pose)},
               {"landmark_ids", gt.landmark_ids}}
              .dump()
       << '\n';
  }
  json lms = json::array();
  for (const Vec3& p : seq.landmarks) {
    lms.push_back(json::array({p.x(), p.y(), p.z()}));
  }
  os << json{{"type", "landmarks"}, {"positions", std::move(lms)}}.dump() << '\n';
  json pairs = json::array();
  for (const DuplicatePair& d : seq.duplicates) {
    pairs.push_back(json::array({d.original, d.twin}));
  }
  os << json{{"type", "duplicates"}, {"pairs", std::move(pairs)}}.dump() << '\n';
}

inline void write_sequence(const std::string& path, const Sequence& seq) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kInvalidArgument, "cannot open '" + path + "' for writing");
  write_sequence(os, seq);
  require(static_cast<bool>(os), ErrorCode::kInvalidState, "write to '" + path + "' failed");
}

inline Sequence read_sequence(std::istream& is) {
  using detail::json;
  Sequence seq;
  bool have_header = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const std::string where = "sequence line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        seq.config = detail::world_config_from_json(j.at("config"));
        seq.intrinsics = detail::intrinsics_from_json(j.at("intrinsics"));
        have_header = true;
      } else if (type == "keyframe") {
        require(have_header, ErrorCode::kParse, where + ": keyframe before header");
        SequenceKeyFrame kf;
        kf.id = j.at("id").get<KeyFrameId>();
        kf.timestamp = j.at("timestamp").get<double>();
        kf.pose_init = detail::pose_from_json(j.at("pose_init"));
        const json& kps = j.at("keypoints");
        const json& descs = j.at("descriptors");
        require(kps.size() == descs.size(), ErrorCode::kParse, where + ": keypoint/descriptor count mismatch");
        for (std::size_t i = 0; i < kps.size(); ++i) {
          kf.keypoints.push_back(
              {kps[i].at(0).get<double>(), kps[i].at(1).get<double>(), kps[i].at(2).get<int>(), static_cast<int>(i)});
          kf.descriptors.push_back(BinaryDescriptor::from_hex(descs[i].get<std::string>()));
        }
        seq.keyframes.push_back(std::move(kf));
      } else if (type == "ground_truth") {
        GroundTruthKeyFrame gt;
        gt.id = j.at("id").get<KeyFrameId>();
        gt.pose = detail::pose_from_json(j.at("pose"));
        gt.landmark_ids = j.at("landmark_ids").get<std::vector<std::int64_t>>();
        seq.ground_truth.push_back(std::move(gt));
      } else if (type == "landmarks") {
        for (const json& p : j.at("positions")) {
          seq.landmarks.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
        }
      } else if (type == "duplicates") {
        for (const json& p : j.at("pairs")) {
          seq.duplicates.push_back({p.at(0).get<std::int64_t>(), p.at(1).get<std::int64_t>()});
        }
      } else {
        fail(ErrorCode::kParse, where + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
  }
  require(have_header, ErrorCode::kParse, "sequence has no header line");
  return seq;
}

inline Sequence read_sequence(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kInvalidArgument, "cannot open sequence '" + path + "'");
  return read_sequence(is);
}

}  // namespace lmap
