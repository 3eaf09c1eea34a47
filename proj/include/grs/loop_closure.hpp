#pragma once

// Keyframe database and loop detection between a finalized submap and all
// earlier, non-adjacent submaps.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frontend.hpp"
#include "grs/geometry.hpp"
#include "grs/local_align.hpp"
#include "grs/posegraph.hpp"
#include "grs/registration.hpp"

namespace grs {

struct LoopConfig {
  double tau_loop = 0.5;
  double radius = 0.05;        // fine covisibility radius
  int stride = 4;
  double search_radius = 0.3;  // coarse gate and first ICP stage
  std::size_t min_submap_gap = 2;
  std::size_t max_candidates = 3;
  // Loose prefilter on graph-predicted keyframe cameras.
  double max_camera_distance = 3.0;
  double max_view_angle_deg = 60.0;
  IcpOptions icp{30, 1e-6, std::numeric_limits<double>::infinity()};

  static LoopConfig from_frontend(const FrontendConfig& f) {
    LoopConfig c;
    c.tau_loop = f.tau_loop;
    c.radius = f.radius;
    c.stride = f.stride;
    return c;
  }

  void validate() const {
    if (!(tau_loop > 0.0 && tau_loop < 1.0)) throw InputError("loop: tau_loop must be in (0, 1)");
    if (!(radius > 0.0 && search_radius >= radius)) throw InputError("loop: need 0 < radius <= search_radius");
    if (stride < 1 || min_submap_gap < 1 || max_candidates < 1) throw InputError("loop: bad stride/gap/candidates");
  }
};

struct KeyframeEntry {
  std::size_t frame = 0;
  std::size_t submap = 0;
  SE3Pose pose;  // camera in the submap frame
  std::shared_ptr<const CovisibilityIndex> index;
};

class KeyframeDatabase {
 public:
  /// Adds the keyframes of a finalized submap using its refined pointmaps.
  void add_submap(const Submap& s, const LocalSolution& sol, int stride) {
    for (std::size_t kf : s.keyframes) {
      const auto pts = sol.points.find(kf);
      if (pts == sol.points.end() || pts->second.valid_count() == 0) continue;
      KeyframeEntry e;
      e.frame = kf;
      e.submap = s.id;
      e.pose = sol.poses.at(kf);
      e.index = std::make_shared<CovisibilityIndex>(pts->second, stride);
      entries_.push_back(std::move(e));
    }
  }

  void add(KeyframeEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<KeyframeEntry>& entries() const { return entries_; }

 private:
  std::vector<KeyframeEntry> entries_;
};

struct LoopCandidate {
  std::size_t query_submap = 0;   // the finalized submap (i)
  std::size_t match_submap = 0;   // the earlier submap (j)
  std::size_t query_keyframe = 0;
  std::size_t match_keyframe = 0;
  double score = 0.0;
  SE3Pose relative;  // T_j^-1 T_i: maps submap i coordinates into submap j

  PoseGraphEdge edge(const Mat6& information) const {
    return {match_submap, query_submap, relative, information, EdgeKind::loop};
  }
};

namespace detail {

inline std::vector<Vec3> transformed(const std::vector<Vec3>& pts, const SE3Pose& t) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  const Mat3 r = t.rotation_matrix();
  for (const auto& p : pts) out.push_back(r * p + t.translation);
  return out;
}

/// Symmetric covisibility of query (mapped by a) against match.
inline double aligned_covisibility(const CovisibilityIndex& query, const CovisibilityIndex& match, const SE3Pose& a,
                                   double radius) {
  const double fwd = directional_covisibility(transformed(query.samples(), a), match.tree(), radius);
  if (fwd == 0.0) return 0.0;
  return std::min(fwd, directional_covisibility(transformed(match.samples(), inverse(a)), query.tree(), radius));
}

inline Vec3 optical_axis(const SE3Pose& p) { return p.rotation * Vec3::UnitZ(); }

}  // namespace detail

/// Returns at most one candidate: the best-scoring keyframe pair between the
/// submap and any earlier submap at least `min_submap_gap` behind it, if its
/// score after registration reaches tau_loop.
inline std::vector<LoopCandidate> detect_loops(std::size_t submap, const KeyframeDatabase& db, const PoseGraph& graph,
                                               const LoopConfig& cfg) {
  cfg.validate();
  if (!graph.nodes().count(submap)) throw InputError("detect_loops: submap has no graph node");
  const SE3Pose t_i = graph.node(submap);

  struct Coarse {
    const KeyframeEntry* q;
    const KeyframeEntry* c;
    SE3Pose guess;
    double score;
  };
  std::vector<Coarse> coarse;
  const double cos_max = std::cos(cfg.max_view_angle_deg * std::numbers::pi / 180.0);
  for (const auto& q : db.entries()) {
    if (q.submap != submap) continue;
    const SE3Pose wq = compose(t_i, q.pose);
    for (const auto& c : db.entries()) {
      if (c.submap + cfg.min_submap_gap > submap) continue;
      const auto node = graph.nodes().find(c.submap);
      if (node == graph.nodes().end()) continue;
      const SE3Pose wc = compose(node->second, c.pose);
      if ((wq.translation - wc.translation).norm() > cfg.max_camera_distance) continue;
      if (detail::optical_axis(wq).dot(detail::optical_axis(wc)) < cos_max) continue;
      // Two hypotheses: the graph estimate, and the two cameras coinciding.
      const SE3Pose by_graph = compose(inverse(node->second), t_i);
      const SE3Pose by_view = compose(c.pose, inverse(q.pose));
      Coarse best{&q, &c, by_graph, detail::aligned_covisibility(*q.index, *c.index, by_graph, cfg.search_radius)};
      const double sv = detail::aligned_covisibility(*q.index, *c.index, by_view, cfg.search_radius);
      if (sv > best.score) best = {&q, &c, by_view, sv};
      if (best.score >= cfg.tau_loop) coarse.push_back(best);
    }
  }
  std::stable_sort(coarse.begin(), coarse.end(), [](const Coarse& a, const Coarse& b) { return a.score > b.score; });
  if (coarse.size() > cfg.max_candidates) coarse.resize(cfg.max_candidates);

  std::optional<LoopCandidate> best;
  for (const auto& cand : coarse) {
    const auto& src = cand.q->index->tree().points();
    const KdTree& target = cand.c->index->tree();
    if (src.size() < 3 || target.size() < 3) continue;
    IcpOptions opt = cfg.icp;
    opt.max_distance = cfg.search_radius;
    const auto stage1 = icp(src, target, Sim3Transform(cand.guess), opt);
    opt.max_distance = 2.0 * cfg.radius;
    const auto stage2 = icp(src, target, stage1.transform, opt);
    const SE3Pose refined = stage2.transform.rigid_part();
    const double score = detail::aligned_covisibility(*cand.q->index, *cand.c->index, refined, cfg.radius);
    if (score >= cfg.tau_loop && (!best || score > best->score)) {
      best = LoopCandidate{submap, cand.c->submap, cand.q->frame, cand.c->frame, score, refined};
    }
  }
  if (!best) return {};
  return {*best};
}

}  // namespace grs
