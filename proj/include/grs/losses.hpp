#pragma once

// Training objectives for the pointmap predictor as pure functions, with
// analytic gradients and a central-difference checker.
//
//   regression: sum_i c_i |x̂_i / ŝ - x_i / s| - beta log c_i
//   pose:       sum_t |q̂_t - q_t| + |τ̂_t / ŝ - τ_t / s|
//
// Normalization factors are mean Euclidean norms of the valid points (or
// translations); with metric_scale the prediction reuses the ground-truth
// factor.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"

namespace grs::losses {

struct LossConfig {
  double beta = 0.2;
  bool metric_scale = true;

  void validate() const {
    if (!(beta > 0.0)) throw InputError("LossConfig: beta must be positive");
  }
};

struct RegressionGradient {
  std::vector<Vec3> points;       // dL/dx̂_i (zero on unused pixels)
  std::vector<double> confidence;  // dL/dc_i
};

namespace detail {

inline std::vector<std::size_t> usable_pixels(const PointMap& pred, const ConfidenceMap& conf, const PointMap& gt) {
  if (!pred.same_shape(gt) || !conf.matches(gt)) throw InputError("regression_loss: shape mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.is_valid(i) || !pred.is_valid(i)) continue;
    if (!(conf.values[i] > 0.0)) throw InputError("regression_loss: confidences must be positive");
    idx.push_back(i);
  }
  if (idx.empty()) throw InputError("regression_loss: empty validity mask");
  return idx;
}

template <typename Points>
double mean_norm(const Points& pts, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (auto i : idx) s += pts[i].norm();
  return s / static_cast<double>(idx.size());
}

struct Scales {
  double gt = 1.0;
  double pred = 1.0;
};

inline Scales regression_scales(const PointMap& pred, const PointMap& gt, const std::vector<std::size_t>& idx,
                                const LossConfig& cfg) {
  Scales s;
  s.gt = mean_norm(gt.points, idx);
  if (!(s.gt > 0.0)) throw DegenerateError("regression_loss: ground-truth points have zero mean norm");
  s.pred = cfg.metric_scale ? s.gt : mean_norm(pred.points, idx);
  if (!(s.pred > 0.0)) throw DegenerateError("regression_loss: predicted points have zero mean norm");
  return s;
}

}  // namespace detail

inline double regression_loss(const PointMap& pred, const ConfidenceMap& conf, const PointMap& gt,
                              const LossConfig& cfg) {
  cfg.validate();
  const auto idx = detail::usable_pixels(pred, conf, gt);
  const auto s = detail::regression_scales(pred, gt, idx, cfg);
  double loss = 0.0;
  for (auto i : idx) {
    const double c = conf.values[i];
    loss += c * (pred.points[i] / s.pred - gt.points[i] / s.gt).norm() - cfg.beta * std::log(c);
  }
  return loss;
}

/// Analytic gradient of regression_loss. Pixels with a zero residual take the
/// zero subgradient for the distance term.
inline RegressionGradient regression_loss_gradient(const PointMap& pred, const ConfidenceMap& conf,
                                                   const PointMap& gt, const LossConfig& cfg) {
  cfg.validate();
  const auto idx = detail::usable_pixels(pred, conf, gt);
  const auto s = detail::regression_scales(pred, gt, idx, cfg);
  RegressionGradient g{std::vector<Vec3>(pred.size(), Vec3::Zero()), std::vector<double>(pred.size(), 0.0)};

  // Unit residual directions, and the chain term through ŝ when it depends on
  // the prediction.
  double scale_coupling = 0.0;  // sum_i c_i u_i . x̂_i
  std::vector<Vec3> unit(pred.size(), Vec3::Zero());
  for (auto i : idx) {
    const Vec3 r = pred.points[i] / s.pred - gt.points[i] / s.gt;
    const double n = r.norm();
    if (n > 0.0) unit[i] = r / n;
    g.confidence[i] = n - cfg.beta / conf.values[i];
    g.points[i] = conf.values[i] * unit[i] / s.pred;
    scale_coupling += conf.values[i] * unit[i].dot(pred.points[i]);
  }
  if (!cfg.metric_scale) {
    const double m = static_cast<double>(idx.size());
    for (auto i : idx) {
      const double norm = pred.points[i].norm();
      if (norm > 0.0) g.points[i] -= scale_coupling / (s.pred * s.pred) * pred.points[i] / (m * norm);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pose loss

/// Explicit normalization factors; when absent they are derived from the
/// sequences themselves (sequence-global mean translation norm).
struct PoseScales {
  double gt = 1.0;
  double pred = 1.0;
};

struct PoseGradient {
  std::vector<Vec3> translation;              // dL/dτ̂_t
  std::vector<Eigen::Vector4d> quaternion;     // dL/d(q̂x, q̂y, q̂z, q̂w)
};

namespace detail {

inline double mean_translation_norm(const std::vector<SE3Pose>& poses) {
  double s = 0.0;
  for (const auto& p : poses) s += p.translation.norm();
  s /= static_cast<double>(poses.size());
  // A sequence resting at the origin carries no scale information.
  return s > 0.0 ? s : 1.0;
}

inline PoseScales pose_scales(const std::vector<SE3Pose>& pred, const std::vector<SE3Pose>& gt,
                              const LossConfig& cfg, const std::optional<PoseScales>& given) {
  if (given) {
    if (!(given->gt > 0.0) || !(given->pred > 0.0)) throw InputError("pose_loss: scales must be positive");
    return *given;
  }
  PoseScales s;
  s.gt = mean_translation_norm(gt);
  s.pred = cfg.metric_scale ? s.gt : mean_translation_norm(pred);
  return s;
}

inline void check_lengths(const std::vector<SE3Pose>& pred, const std::vector<SE3Pose>& gt) {
  if (pred.size() != gt.size()) throw InputError("pose_loss: length mismatch");
  if (pred.empty()) throw InputError("pose_loss: empty sequence");
}

// Normalized prediction coefficients flipped into the ground truth's hemisphere.
inline Eigen::Vector4d aligned_quaternion(const Quaternion& pred, const Quaternion& gt, double* sign = nullptr) {
  const Eigen::Vector4d p = pred.coeffs().normalized();
  const Eigen::Vector4d q = gt.coeffs().normalized();
  const double sg = p.dot(q) < 0.0 ? -1.0 : 1.0;
  if (sign) *sign = sg;
  return sg * p;
}

}  // namespace detail

inline double pose_loss(const std::vector<SE3Pose>& pred, const std::vector<SE3Pose>& gt, const LossConfig& cfg,
                        const std::optional<PoseScales>& scales = std::nullopt) {
  detail::check_lengths(pred, gt);
  const auto s = detail::pose_scales(pred, gt, cfg, scales);
  double loss = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const Eigen::Vector4d qd = detail::aligned_quaternion(pred[t].rotation, gt[t].rotation) -
                               gt[t].rotation.coeffs().normalized();
    loss += qd.norm() + (pred[t].translation / s.pred - gt[t].translation / s.gt).norm();
  }
  return loss;
}

inline PoseGradient pose_loss_gradient(const std::vector<SE3Pose>& pred, const std::vector<SE3Pose>& gt,
                                       const LossConfig& cfg, const std::optional<PoseScales>& scales = std::nullopt) {
  detail::check_lengths(pred, gt);
  const auto s = detail::pose_scales(pred, gt, cfg, scales);
  const std::size_t n = pred.size();
  PoseGradient g{std::vector<Vec3>(n, Vec3::Zero()), std::vector<Eigen::Vector4d>(n, Eigen::Vector4d::Zero())};

  double scale_coupling = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double sign = 1.0;
    const Eigen::Vector4d raw = pred[t].rotation.coeffs();
    const double raw_norm = raw.norm();
    const Eigen::Vector4d unit_q = raw / raw_norm;
    const Eigen::Vector4d diff = detail::aligned_quaternion(pred[t].rotation, gt[t].rotation, &sign) -
                                 gt[t].rotation.coeffs().normalized();
    const double dn = diff.norm();
    if (dn > 0.0) {
      const Eigen::Vector4d d_unit = sign * diff / dn;
      g.quaternion[t] = (d_unit - unit_q * unit_q.dot(d_unit)) / raw_norm;
    }
    const Vec3 r = pred[t].translation / s.pred - gt[t].translation / s.gt;
    const double rn = r.norm();
    if (rn > 0.0) {
      const Vec3 u = r / rn;
      g.translation[t] = u / s.pred;
      scale_coupling += u.dot(pred[t].translation);
    }
  }
  const bool derived_pred_scale = !scales && !cfg.metric_scale;
  if (derived_pred_scale) {
    double mean = 0.0;
    for (const auto& p : pred) mean += p.translation.norm();
    if (mean > 0.0) {
      for (std::size_t t = 0; t < n; ++t) {
        const double norm = pred[t].translation.norm();
        if (norm > 0.0) {
          g.translation[t] -= scale_coupling / (s.pred * s.pred) * pred[t].translation / (static_cast<double>(n) * norm);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Finite differences

inline Eigen::VectorXd numerical_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double eps) {
  if (!(eps > 0.0)) throw InputError("numerical_gradient: eps must be positive");
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + eps;
    const double up = f(probe);
    probe(i) = x(i) - eps;
    const double down = f(probe);
    probe(i) = x(i);
    grad(i) = (up - down) / (2.0 * eps);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Curriculum parameter masks (configuration only; nothing here trains).

enum class ParameterGroup { kEncoder, kGates, kDecoder, kHeads };

enum class CurriculumStage { kGatesOnly = 1, kDecoderAndGates = 2, kFullFineTune = 3 };

struct StageSpec {
  CurriculumStage stage;
  int sequence_length;
  bool train_encoder;
  bool train_gates;
  bool train_decoder;
  bool train_heads;
};

inline StageSpec stage_spec(CurriculumStage stage) {
  switch (stage) {
    case CurriculumStage::kGatesOnly:
      return {stage, 4, false, true, false, false};
    case CurriculumStage::kDecoderAndGates:
      return {stage, 4, false, true, true, false};
    case CurriculumStage::kFullFineTune:
      return {stage, 64, false, true, true, true};
  }
  throw InputError("unknown curriculum stage");
}

/// Maps a predictor tensor name to its parameter group.
inline ParameterGroup parameter_group(std::string_view tensor_name) {
  if (tensor_name.starts_with("encoder.")) return ParameterGroup::kEncoder;
  if (tensor_name.starts_with("reset_gate.") || tensor_name.starts_with("update_gate.")) return ParameterGroup::kGates;
  if (tensor_name.starts_with("head_")) return ParameterGroup::kHeads;
  return ParameterGroup::kDecoder;  // decoder blocks, initial state and pose token
}

inline bool is_trainable(CurriculumStage stage, ParameterGroup group) {
  const StageSpec s = stage_spec(stage);
  switch (group) {
    case ParameterGroup::kEncoder: return s.train_encoder;
    case ParameterGroup::kGates: return s.train_gates;
    case ParameterGroup::kDecoder: return s.train_decoder;
    case ParameterGroup::kHeads: return s.train_heads;
  }
  return false;
}

inline std::vector<bool> trainable_mask(CurriculumStage stage, const std::vector<std::string>& tensor_names) {
  std::vector<bool> mask;
  mask.reserve(tensor_names.size());
  for (const auto& n : tensor_names) mask.push_back(is_trainable(stage, parameter_group(n)));
  return mask;
}

}  // namespace grs::losses
