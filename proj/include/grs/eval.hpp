#pragma once

// Trajectory error and reconstruction accuracy / completeness.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "grs/errors.hpp"
#include "grs/geometry.hpp"
#include "grs/json_util.hpp"
#include "grs/nearest_neighbor.hpp"
#include "grs/parallel.hpp"
#include "grs/registration.hpp"
#include "grs/umeyama.hpp"

namespace grs::eval {

inline constexpr double kMaxTimeOffset = 0.02;  // seconds

/// Index pairs (est, gt) matched by nearest timestamp within max_dt. Exact
/// matches come out first for identical frame ids.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est, const Trajectory& gt,
                                                                  double max_dt = kMaxTimeOffset) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    while (j + 1 < gt.size() && std::abs(gt[j + 1].timestamp - t) <= std::abs(gt[j].timestamp - t)) ++j;
    if (j < gt.size() && std::abs(gt[j].timestamp - t) <= max_dt) out.emplace_back(i, j);
  }
  return out;
}

struct AteResult {
  double rmse = 0.0;
  Sim3Transform alignment;
  std::vector<Vec3> est_positions;  // after alignment
  std::vector<Vec3> gt_positions;
  std::vector<double> residuals;
  std::vector<double> timestamps;
};

/// ATE over associated pairs. With `align`, est positions are first mapped by
/// the least-squares similarity onto gt.
inline AteResult ate(const Trajectory& est, const Trajectory& gt, bool align, double max_dt = kMaxTimeOffset) {
  const auto pairs = associate(est, gt, max_dt);
  if (pairs.size() < 2) throw InputError("ate: need at least 2 associated poses");
  AteResult r;
  std::vector<Vec3> e, g;
  for (auto [i, j] : pairs) {
    e.push_back(est[i].pose.translation);
    g.push_back(gt[j].pose.translation);
    r.timestamps.push_back(est[i].timestamp);
  }
  if (align) r.alignment = weighted_umeyama(e, g, true);
  double sum = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    const Vec3 p = align ? Vec3(r.alignment * e[k]) : e[k];
    const double d = (p - g[k]).norm();
    r.est_positions.push_back(p);
    r.residuals.push_back(d);
    sum += d * d;
  }
  r.gt_positions = std::move(g);
  r.rmse = std::sqrt(sum / static_cast<double>(e.size()));
  return r;
}

/// Strict form: both trajectories must have the same length and every pose
/// must find its partner.
inline double ate_rmse(const Trajectory& est, const Trajectory& gt, bool align) {
  if (est.size() != gt.size()) throw InputError("ate_rmse: trajectory length mismatch");
  if (est.size() < 2) throw InputError("ate_rmse: need at least 2 poses");
  const AteResult r = ate(est, gt, align);
  if (r.residuals.size() != est.size()) throw InputError("ate_rmse: timestamps do not match");
  return r.rmse;
}

struct CloudAlignment {
  Sim3Transform transform;
  std::vector<double> icp_trace;
};

/// Similarity from matched trajectory positions, then ICP on the clouds with
/// the scale held fixed.
inline CloudAlignment align_clouds(const PointCloud& pred, const PointCloud& gt, std::span<const Vec3> est_positions,
                                   std::span<const Vec3> gt_positions, const IcpOptions& opt = {}) {
  if (pred.size() < 3 || gt.size() < 3) throw InputError("align_clouds: clouds need at least 3 points");
  const Sim3Transform coarse = weighted_umeyama(est_positions, gt_positions, true);
  const KdTree tree(gt.points);
  const IcpResult res = icp(pred.points, tree, coarse, opt);
  return {res.transform, res.rmse_trace};
}

struct AccComp {
  double acc_mean = 0.0;
  double acc_median = 0.0;
  double comp_mean = 0.0;
  double comp_median = 0.0;
};

namespace detail {

inline std::vector<double> nn_distances(const std::vector<Vec3>& queries, const KdTree& tree) {
  std::vector<double> d(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) { d[i] = std::sqrt(tree.nearest(queries[i]).squared_distance); });
  return d;
}

inline std::pair<double, double> mean_median(std::vector<double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  const double median = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return {sum / static_cast<double>(n), median};
}

}  // namespace detail

/// Accuracy: predicted points to their nearest ground-truth point.
/// Completeness: ground-truth points to their nearest predicted point.
inline AccComp accuracy_completeness(const PointCloud& pred, const PointCloud& gt) {
  if (pred.empty() || gt.empty()) throw InputError("accuracy_completeness: empty cloud");
  AccComp r;
  std::tie(r.acc_mean, r.acc_median) = detail::mean_median(detail::nn_distances(pred.points, KdTree(gt.points)));
  std::tie(r.comp_mean, r.comp_median) = detail::mean_median(detail::nn_distances(gt.points, KdTree(pred.points)));
  return r;
}

/// Centroid per occupied voxel, in lexicographic voxel order.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw InputError("voxel_downsample: voxel size must be positive");
  std::map<std::tuple<long, long, long>, std::tuple<Vec3, double, int>> cells;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const auto key = std::make_tuple(static_cast<long>(std::floor(p.x() / voxel)),
                                     static_cast<long>(std::floor(p.y() / voxel)),
                                     static_cast<long>(std::floor(p.z() / voxel)));
    auto& [sum, conf, n] = cells.try_emplace(key, Vec3::Zero(), 0.0, 0).first->second;
    sum += p;
    conf += cloud.confidence[i];
    ++n;
  }
  PointCloud out;
  for (const auto& [key, cell] : cells) {
    const auto& [sum, conf, n] = cell;
    out.push_back(sum / n, conf / n);
  }
  return out;
}

struct EvalReport {
  double ate_rmse = 0.0;  // meters
  std::optional<AccComp> reconstruction;
  Sim3Transform alignment;
  std::size_t frames = 0;
};

struct EvalOptions {
  bool align = true;     // similarity alignment before ATE
  double voxel = 0.0;    // downsample both clouds before acc/comp; 0 keeps all points
  IcpOptions icp;
};

/// ATE plus, when both clouds are given, accuracy/completeness after the
/// trajectory-seeded ICP alignment.
inline EvalReport evaluate(const Trajectory& est, const Trajectory& gt, const PointCloud* pred_cloud,
                           const PointCloud* gt_cloud, const EvalOptions& opt = {}) {
  EvalReport rep;
  const AteResult a = ate(est, gt, opt.align);
  rep.ate_rmse = a.rmse;
  rep.alignment = a.alignment;
  rep.frames = a.residuals.size();
  if (pred_cloud && gt_cloud) {
    std::vector<Vec3> e, g;
    for (auto [i, j] : associate(est, gt)) {
      e.push_back(est[i].pose.translation);
      g.push_back(gt[j].pose.translation);
    }
    PointCloud pred = opt.voxel > 0.0 ? voxel_downsample(*pred_cloud, opt.voxel) : *pred_cloud;
    const PointCloud truth = opt.voxel > 0.0 ? voxel_downsample(*gt_cloud, opt.voxel) : *gt_cloud;
    const CloudAlignment ca = align_clouds(pred, truth, e, g, opt.icp);
    pred = apply(ca.transform, pred);
    rep.reconstruction = accuracy_completeness(pred, truth);
  }
  return rep;
}

inline json_util::Json to_json(const EvalReport& r) {
  json_util::Json j;
  j["frame_count"] = r.frames;
  j["ate_rmse_m"] = r.ate_rmse;
  j["ate_rmse_cm"] = 100.0 * r.ate_rmse;
  if (r.reconstruction) {
    j["acc_mean_cm"] = 100.0 * r.reconstruction->acc_mean;
    j["acc_median_cm"] = 100.0 * r.reconstruction->acc_median;
    j["comp_mean_cm"] = 100.0 * r.reconstruction->comp_mean;
    j["comp_median_cm"] = 100.0 * r.reconstruction->comp_median;
  }
  const auto& a = r.alignment;
  j["alignment"] = {{"scale", a.scale},
                    {"rotation_xyzw", {a.rotation.x(), a.rotation.y(), a.rotation.z(), a.rotation.w()}},
                    {"translation", json_util::from_vec3(a.translation)}};
  return j;
}

}  // namespace grs::eval
