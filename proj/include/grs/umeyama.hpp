#pragma once

// Closed-form weighted similarity (or rigid) alignment of corresponded point
// sets: minimizes sum_i w_i |dst_i - s R src_i - t|^2 with det(R) = +1.

#include <Eigen/SVD>

#include <span>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"

namespace grs {

inline Sim3Transform weighted_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst,
                                      std::span<const double> weights, bool with_scale) {
  const std::size_t n = src.size();
  if (dst.size() != n || weights.size() != n) throw InputError("weighted_umeyama: size mismatch");
  if (n < 3) throw DegenerateError("weighted_umeyama: need at least 3 correspondences");

  double total = 0.0;
  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] > 0.0)) throw InputError("weighted_umeyama: weights must be positive");
    total += weights[i];
    mu_src += weights[i] * src[i];
    mu_dst += weights[i] * dst[i];
  }
  mu_src /= total;
  mu_dst /= total;

  Mat3 cross = Mat3::Zero();
  Mat3 src_cov = Mat3::Zero();
  double src_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = src[i] - mu_src;
    const Vec3 b = dst[i] - mu_dst;
    cross += weights[i] * b * a.transpose();
    src_cov += weights[i] * a * a.transpose();
    src_var += weights[i] * a.squaredNorm();
  }
  cross /= total;
  src_cov /= total;
  src_var /= total;

  // Collinear or coincident sources leave the rotation about that line free.
  const Eigen::JacobiSVD<Mat3> src_svd(src_cov);
  const Vec3 src_sv = src_svd.singularValues();
  if (!(src_sv(0) > 0.0) || src_sv(1) <= 1e-12 * src_sv(0)) {
    throw DegenerateError("weighted_umeyama: degenerate (collinear or coincident) source points");
  }

  const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateError("weighted_umeyama: degenerate (collinear or coincident) target points");
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Vec3 sign = Vec3::Ones();
  if (u.determinant() * v.determinant() < 0.0) sign(2) = -1.0;
  const Mat3 r = u * sign.asDiagonal() * v.transpose();

  const double scale = with_scale ? sv.dot(sign) / src_var : 1.0;
  if (!(scale > 0.0)) throw DegenerateError("weighted_umeyama: non-positive scale");
  const Vec3 t = mu_dst - scale * (r * mu_src);
  return {scale, Quaternion(r), t};
}

inline Sim3Transform weighted_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst,
                                      bool with_scale) {
  const std::vector<double> ones(src.size(), 1.0);
  return weighted_umeyama(src, dst, ones, with_scale);
}

inline double weighted_squared_residual(std::span<const Vec3> src, std::span<const Vec3> dst,
                                        std::span<const double> weights, const Sim3Transform& t) {
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += weights[i] * (dst[i] - t * src[i]).squaredNorm();
  return sum;
}

}  // namespace grs
