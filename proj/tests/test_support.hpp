#pragma once

// Shared generators and comparisons for the unit and acceptance suites.

#include <cmath>
#include <numbers>
#include <random>

#include "grs/geometry.hpp"

namespace grs::testing {

inline Vec3 random_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Vec3 random_vector(std::mt19937_64& rng, double half_range) {
  std::uniform_real_distribution<double> u(-half_range, half_range);
  return {u(rng), u(rng), u(rng)};
}

/// Twist with rotation angle uniform in [0, max_angle].
inline Twist random_twist(std::mt19937_64& rng, double max_angle, double max_translation) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  Twist xi;
  xi.head<3>() = a(rng) * random_unit_vector(rng);
  xi.tail<3>() = random_vector(rng, max_translation);
  return xi;
}

inline SE3Pose random_pose(std::mt19937_64& rng, double max_translation = 5.0) {
  std::uniform_real_distribution<double> a(0.0, std::numbers::pi);
  return {Quaternion(Eigen::AngleAxisd(a(rng), random_unit_vector(rng))), random_vector(rng, max_translation)};
}

/// Max of rotation-matrix entry error and translation error.
inline double pose_distance(const SE3Pose& a, const SE3Pose& b) {
  const double r = (a.rotation_matrix() - b.rotation_matrix()).cwiseAbs().maxCoeff();
  const double t = (a.translation - b.translation).cwiseAbs().maxCoeff();
  return std::max(r, t);
}

}  // namespace grs::testing
