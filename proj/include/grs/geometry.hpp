#pragma once

// Lie-group and point-set primitives: SE(3)/Sim(3) transforms, exponential
// and logarithm maps, dense pointmaps with per-pixel confidence, and
// timestamped trajectories.
//
// Rotations are stored as unit quaternions in the w >= 0 hemisphere and are
// only expanded to 3x3 matrices when points are transformed.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <type_traits>
#include <vector>

#include "grs/errors.hpp"

namespace grs {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quaternion = Eigen::Quaterniond;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Tangent vector of SE(3): rotational part first, then translational part.
using Twist = Vec6;

inline constexpr double kSmallAngle = 1e-8;
inline constexpr double kLogAngleLimit = std::numbers::pi - 1e-6;

/// Normalizes q and flips it into the w >= 0 hemisphere.
inline Quaternion canonical(Quaternion q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<  0.0, -v.z(),  v.y(),
       v.z(),   0.0, -v.x(),
      -v.y(),  v.x(),   0.0;
  // clang-format on
  return s;
}

struct SE3Pose {
  Quaternion rotation = Quaternion::Identity();
  Vec3 translation = Vec3::Zero();

  SE3Pose() = default;
  SE3Pose(const Quaternion& q, const Vec3& t) : rotation(canonical(q)), translation(t) {}

  static SE3Pose identity() { return {}; }

  // Keeps the coefficients exactly as given (no renormalization or hemisphere
  // flip), so that text formats re-serialize byte-identically.
  static SE3Pose from_raw(const Quaternion& q, const Vec3& t) {
    SE3Pose p;
    p.rotation = q;
    p.translation = t;
    return p;
  }
  static SE3Pose from_matrix(const Eigen::Matrix4d& m) {
    return {Quaternion(Mat3(m.block<3, 3>(0, 0))), m.block<3, 1>(0, 3)};
  }

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation_matrix();
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
};

struct Sim3Transform {
  double scale = 1.0;
  Quaternion rotation = Quaternion::Identity();
  Vec3 translation = Vec3::Zero();

  Sim3Transform() = default;
  Sim3Transform(double s, const Quaternion& q, const Vec3& t)
      : scale(s), rotation(canonical(q)), translation(t) {
    if (!(s > 0.0)) throw InputError("Sim3Transform: scale must be positive");
  }
  explicit Sim3Transform(const SE3Pose& pose)
      : scale(1.0), rotation(pose.rotation), translation(pose.translation) {}

  static Sim3Transform identity() { return {}; }

  SE3Pose rigid_part() const { return {rotation, translation}; }
  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
  Vec3 operator*(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// ---------------------------------------------------------------------------
// Group operations

inline SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
  return {a.rotation * b.rotation, a.translation + a.rotation * b.translation};
}

inline SE3Pose inverse(const SE3Pose& t) {
  const Quaternion q_inv = t.rotation.conjugate();
  return {q_inv, -(q_inv * t.translation)};
}

inline SE3Pose operator*(const SE3Pose& a, const SE3Pose& b) { return compose(a, b); }

inline Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b) {
  return {a.scale * b.scale, a.rotation * b.rotation,
          a.scale * (a.rotation * b.translation) + a.translation};
}

inline Sim3Transform inverse(const Sim3Transform& t) {
  const Quaternion q_inv = t.rotation.conjugate();
  const double s_inv = 1.0 / t.scale;
  return {s_inv, q_inv, -s_inv * (q_inv * t.translation)};
}

/// Maps a camera pose through a similarity: positions are scaled, rotations
/// composed.
inline SE3Pose transform_pose(const Sim3Transform& s, const SE3Pose& p) {
  return {s.rotation * p.rotation, s * p.translation};
}

/// Angle of the relative rotation between two quaternions, radians.
inline double rotation_angle_between(const Quaternion& a, const Quaternion& b) {
  const Quaternion d = canonical(a.conjugate() * b);
  return 2.0 * std::atan2(d.vec().norm(), d.w());
}

// ---------------------------------------------------------------------------
// Exponential / logarithm

inline Quaternion so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    // sin(theta/2)/theta ~ 1/2 - theta^2/48
    const double half_sinc = 0.5 - theta * theta / 48.0;
    return canonical(Quaternion(1.0 - theta * theta / 8.0, half_sinc * omega.x(),
                                half_sinc * omega.y(), half_sinc * omega.z()));
  }
  const double s = std::sin(0.5 * theta) / theta;
  return canonical(Quaternion(std::cos(0.5 * theta), s * omega.x(), s * omega.y(), s * omega.z()));
}

/// Rotation vector of q. Requires the rotation angle to be below pi - 1e-6.
inline Vec3 so3_log(const Quaternion& q_in) {
  const Quaternion q = canonical(q_in);
  const double n = q.vec().norm();
  const double w = q.w();
  const double theta = 2.0 * std::atan2(n, w);
  if (theta >= kLogAngleLimit) throw DegenerateError("so3_log: rotation angle too close to pi");
  if (theta < kSmallAngle) {
    // theta/n ~ (2/w) (1 - n^2 / (3 w^2))
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * q.vec();
  }
  return (theta / n) * q.vec();
}

/// V matrix of the SE(3) exponential: t = V(omega) * v.
inline Mat3 se3_left_jacobian_rotation(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  double b;
  double c;
  if (theta < kSmallAngle) {
    b = 0.5 - theta * theta / 24.0;
    c = 1.0 / 6.0 - theta * theta / 120.0;
  } else {
    const double half_sin = std::sin(0.5 * theta);
    b = 2.0 * half_sin * half_sin / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

inline Mat3 se3_left_jacobian_rotation_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  double d;
  if (theta < kSmallAngle) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    d = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  return Mat3::Identity() - 0.5 * k + d * k * k;
}

inline SE3Pose se3_exp(const Twist& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  SE3Pose out;
  out.rotation = so3_exp(omega);
  out.translation = se3_left_jacobian_rotation(omega) * v;
  return out;
}

/// Throws DegenerateError when the rotation angle is within 1e-6 of pi.
inline Twist se3_log(const SE3Pose& t) {
  const Vec3 omega = so3_log(t.rotation);
  Twist xi;
  xi.head<3>() = omega;
  xi.tail<3>() = se3_left_jacobian_rotation_inverse(omega) * t.translation;
  return xi;
}

// ---------------------------------------------------------------------------
// Dense per-pixel maps

struct PointMap {
  int width = 0;
  int height = 0;
  std::vector<Vec3> points;     // row-major, height * width
  std::vector<std::uint8_t> valid;

  PointMap() = default;
  PointMap(int w, int h)
      : width(w), height(h),
        points(static_cast<std::size_t>(checked_size(w, h)), Vec3::Zero()),
        valid(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 1) {}

  std::size_t size() const { return points.size(); }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(col);
  }
  bool is_valid(std::size_t i) const { return valid[i] != 0; }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
  bool same_shape(const PointMap& o) const { return width == o.width && height == o.height; }

 private:
  static long checked_size(int w, int h) {
    if (w < 1 || h < 1) throw InputError("PointMap: width and height must be >= 1");
    return static_cast<long>(w) * h;
  }
};

struct ConfidenceMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ConfidenceMap() = default;
  ConfidenceMap(int w, int h, double fill = 1.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::size_t size() const { return values.size(); }
  bool matches(const PointMap& p) const { return width == p.width && height == p.height; }
};

/// Transforms every valid point; invalid entries are copied through untouched.
template <typename Transform>
PointMap apply(const Transform& t, const PointMap& in) {
  PointMap out = in;
  const Mat3 r = t.rotation_matrix();
  double s = 1.0;
  if constexpr (std::is_same_v<Transform, Sim3Transform>) s = t.scale;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!in.is_valid(i)) continue;
    if constexpr (std::is_same_v<Transform, Sim3Transform>) {
      out.points[i] = s * (r * in.points[i]) + t.translation;
    } else {
      out.points[i] = r * in.points[i] + t.translation;
    }
  }
  return out;
}

/// Flat list of points, with a parallel confidence channel, used for maps and
/// evaluation clouds.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> confidence;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push_back(const Vec3& p, double c = 1.0) {
    points.push_back(p);
    confidence.push_back(c);
  }
  void append(const PointMap& map, const ConfidenceMap* conf = nullptr) {
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map.is_valid(i)) push_back(map.points[i], conf ? conf->values[i] : 1.0);
    }
  }
};

template <typename Transform>
PointCloud apply(const Transform& t, const PointCloud& in) {
  PointCloud out = in;
  for (auto& p : out.points) p = t * p;
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories

struct StampedPose {
  double timestamp = 0.0;  // seconds
  SE3Pose pose;
};

class Trajectory {
 public:
  Trajectory() = default;

  /// Appends a pose. Timestamps must be strictly increasing.
  void push_back(double timestamp, const SE3Pose& pose) {
    if (!poses_.empty() && !(timestamp > poses_.back().timestamp)) {
      throw InputError("Trajectory: timestamps must be strictly increasing");
    }
    poses_.push_back({timestamp, pose});
  }

  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const StampedPose& operator[](std::size_t i) const { return poses_[i]; }
  auto begin() const { return poses_.begin(); }
  auto end() const { return poses_.end(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(poses_.size());
    for (const auto& p : poses_) out.push_back(p.pose.translation);
    return out;
  }

 private:
  std::vector<StampedPose> poses_;
};

}  // namespace grs
