#pragma once

// Intra-submap refinement: keyframe-centered edges over a temporal window,
// and alternating closed-form minimization of the confidence-weighted
// alignment loss between per-edge predictions and per-frame point estimates.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frame.hpp"
#include "grs/frontend.hpp"
#include "grs/json_util.hpp"
#include "grs/parallel.hpp"
#include "grs/umeyama.hpp"

namespace grs {

struct LocalAlignConfig {
  int window = 2;
  int max_iters = 200;
  double rel_tol = 1e-9;
  bool optimize_scale = false;

  void validate() const {
    if (window < 1) throw InputError("local_align: window must be >= 1");
    if (max_iters < 1) throw InputError("local_align: max_iters must be >= 1");
    if (!(rel_tol >= 0.0)) throw InputError("local_align: rel_tol must be non-negative");
  }
};

inline LocalAlignConfig local_align_config_from_json(const json_util::Json& j) {
  using json_util::get_or;
  LocalAlignConfig c;
  c.window = get_or(j, "window", c.window);
  c.max_iters = get_or(j, "max_iters", c.max_iters);
  c.rel_tol = get_or(j, "rel_tol", c.rel_tol);
  c.optimize_scale = get_or(j, "optimize_scale", c.optimize_scale);
  c.validate();
  return c;
}

struct GraphEdge {
  std::size_t center = 0;
  std::vector<std::size_t> members;  // increasing frame ids, includes center
  // Predictions of each member under this edge's context, expressed in the
  // center frame's coordinates. Parallel to `members`.
  std::vector<PointMap> points;
  std::vector<ConfidenceMap> confidence;
  std::vector<SE3Pose> poses;
  SE3Pose initial_transform;  // center frame -> submap frame
};

struct ConnectivityGraph {
  std::size_t submap = 0;
  std::size_t anchor = 0;
  std::vector<std::size_t> vertices;  // all frames of the submap
  std::vector<GraphEdge> edges;       // one per keyframe, anchor edge first

  bool observed() const {
    return std::all_of(edges.begin(), edges.end(),
                       [](const GraphEdge& e) { return e.points.size() == e.members.size(); });
  }
};

/// One edge per keyframe n with members {n-k .. n+k} restricted to frames of
/// the submap.
inline ConnectivityGraph build_graph(const Submap& submap, int window) {
  if (submap.frames.empty()) throw InputError("build_graph: empty submap");
  if (window < 1) throw InputError("build_graph: window must be >= 1");
  ConnectivityGraph g;
  g.submap = submap.id;
  g.anchor = submap.anchor;
  g.vertices = submap.frames;
  std::sort(g.vertices.begin(), g.vertices.end());
  for (std::size_t kf : submap.keyframes) {
    if (!std::binary_search(g.vertices.begin(), g.vertices.end(), kf)) {
      throw InputError("build_graph: keyframe outside the submap");
    }
    GraphEdge e;
    e.center = kf;
    const std::size_t lo = kf >= static_cast<std::size_t>(window) ? kf - window : 0;
    const std::size_t hi = kf + window;
    for (std::size_t v : g.vertices) {
      if (v >= lo && v <= hi) e.members.push_back(v);
    }
    g.edges.push_back(std::move(e));
  }
  std::stable_partition(g.edges.begin(), g.edges.end(), [&](const GraphEdge& e) { return e.center == g.anchor; });
  if (g.edges.empty() || g.edges.front().center != g.anchor) throw InputError("build_graph: anchor is not a keyframe");
  return g;
}

/// Fills per-edge predictions by running a fresh copy of the predictor from
/// each edge center, then over the remaining members in order. The initial
/// edge transform is the center's pose as predicted by the frontend.
inline void observe_edges(ConnectivityGraph& g, const SequencePredictor& prototype, const Frontend& frontend) {
  auto runner = prototype.clone_fresh();
  for (auto& e : g.edges) {
    runner->reset();
    std::map<std::size_t, FramePrediction> out;
    out.emplace(e.center, runner->step(e.center));
    for (std::size_t v : e.members) {
      if (v != e.center) out.emplace(v, runner->step(v));
    }
    e.points.clear();
    e.confidence.clear();
    e.poses.clear();
    for (std::size_t v : e.members) {
      auto& p = out.at(v);
      e.points.push_back(std::move(p.x_world));
      e.confidence.push_back(std::move(p.c_world));
      e.poses.push_back(p.pose);
    }
    e.initial_transform = e.center == g.anchor ? SE3Pose::identity() : frontend.frame(e.center).prediction.pose;
  }
}

struct LocalSolution {
  std::size_t submap = 0;
  // Refined per-frame points and poses in the submap frame.
  std::map<std::size_t, PointMap> points;
  std::map<std::size_t, ConfidenceMap> confidence;
  std::map<std::size_t, SE3Pose> poses;
  std::vector<SE3Pose> edge_transforms;
  std::vector<double> edge_scales;
  double loss = 0.0;            // squared, as minimized
  double loss_unsquared = 0.0;  // sum of confidence-weighted distances
  std::vector<double> trace;    // loss after every half-step, starting with the initial one
  int iterations = 0;
  bool converged = false;
  bool monotone = true;
};

namespace detail {

struct EdgeTransform {
  SE3Pose pose;
  double scale = 1.0;

  Sim3Transform sim3() const { return {scale, pose.rotation, pose.translation}; }
};

struct LocalState {
  std::map<std::size_t, PointMap> xi;
  std::map<std::size_t, ConfidenceMap> weight;
};

inline LocalState update_points(const ConnectivityGraph& g, const std::vector<EdgeTransform>& t) {
  LocalState s;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& edge = g.edges[e];
    const Sim3Transform sim = t[e].sim3();
    const Mat3 r = sim.scale * sim.rotation_matrix();
    for (std::size_t m = 0; m < edge.members.size(); ++m) {
      const std::size_t v = edge.members[m];
      const PointMap& x = edge.points[m];
      const ConfidenceMap& c = edge.confidence[m];
      auto [it, fresh] = s.xi.try_emplace(v, x.width, x.height);
      auto& w = s.weight.try_emplace(v, x.width, x.height).first->second;
      PointMap& xi = it->second;
      if (fresh) {
        std::fill(xi.points.begin(), xi.points.end(), Vec3::Zero());
        std::fill(xi.valid.begin(), xi.valid.end(), 0);
        std::fill(w.values.begin(), w.values.end(), 0.0);
      }
      if (!xi.same_shape(x)) throw InputError("local_align: member pointmaps differ in shape across edges");
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_valid(i)) continue;
        xi.points[i] += c.values[i] * (r * x.points[i] + sim.translation);
        w.values[i] += c.values[i];
        xi.valid[i] = 1;
      }
    }
  }
  for (auto& [v, xi] : s.xi) {
    const auto& w = s.weight.at(v);
    for (std::size_t i = 0; i < xi.size(); ++i) {
      if (xi.valid[i]) xi.points[i] /= w.values[i];
    }
  }
  return s;
}

inline std::pair<double, double> local_loss(const ConnectivityGraph& g, const std::vector<EdgeTransform>& t,
                                            const LocalState& s) {
  double squared = 0.0, plain = 0.0;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& edge = g.edges[e];
    const Sim3Transform sim = t[e].sim3();
    const Mat3 r = sim.scale * sim.rotation_matrix();
    for (std::size_t m = 0; m < edge.members.size(); ++m) {
      const PointMap& x = edge.points[m];
      const PointMap& xi = s.xi.at(edge.members[m]);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_valid(i)) continue;
        const double d2 = (xi.points[i] - (r * x.points[i] + sim.translation)).squaredNorm();
        squared += edge.confidence[m].values[i] * d2;
        plain += edge.confidence[m].values[i] * std::sqrt(d2);
      }
    }
  }
  return {squared, plain};
}

inline void update_transforms(const ConnectivityGraph& g, std::vector<EdgeTransform>& t, const LocalState& s,
                              bool with_scale) {
  parallel_for(
      g.edges.size(),
      [&](std::size_t e) {
        const auto& edge = g.edges[e];
        if (edge.center == g.anchor) return;  // gauge
        std::vector<Vec3> src, dst;
        std::vector<double> w;
        for (std::size_t m = 0; m < edge.members.size(); ++m) {
          const PointMap& x = edge.points[m];
          const PointMap& xi = s.xi.at(edge.members[m]);
          for (std::size_t i = 0; i < x.size(); ++i) {
            if (!x.is_valid(i) || !(edge.confidence[m].values[i] > 0.0)) continue;
            src.push_back(x.points[i]);
            dst.push_back(xi.points[i]);
            w.push_back(edge.confidence[m].values[i]);
          }
        }
        try {
          const Sim3Transform sim = weighted_umeyama(src, dst, w, with_scale);
          t[e] = {SE3Pose(sim.rotation, sim.translation), sim.scale};
        } catch (const DegenerateError&) {
          // Too little structure to pin this edge; keep its transform.
        }
      },
      1);
}

}  // namespace detail

inline LocalSolution optimize_local(const ConnectivityGraph& g, const LocalAlignConfig& cfg) {
  cfg.validate();
  if (g.edges.empty()) throw InputError("optimize_local: graph has no edges");
  if (!g.observed()) throw InputError("optimize_local: edges have no predictions");

  std::vector<detail::EdgeTransform> t(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (g.edges[e].center != g.anchor) t[e].pose = g.edges[e].initial_transform;
  }
  detail::LocalState state = detail::update_points(g, t);
  LocalSolution sol;
  sol.submap = g.submap;
  auto [loss, plain] = detail::local_loss(g, t, state);
  sol.trace.push_back(loss);
  // Rounding noise in the loss scales with the data, not with the residual.
  double data_scale = 0.0;
  for (const auto& e : g.edges) {
    for (std::size_t m = 0; m < e.members.size(); ++m) {
      for (std::size_t i = 0; i < e.points[m].size(); ++i) {
        if (e.points[m].is_valid(i)) data_scale += e.confidence[m].values[i] * e.points[m].points[i].squaredNorm();
      }
    }
  }
  auto record = [&](double value) {
    if (value > sol.trace.back() * (1.0 + 1e-12) + 1e-14 * data_scale) sol.monotone = false;
    sol.trace.push_back(value);
  };

  for (int it = 0; it < cfg.max_iters; ++it) {
    const double before = loss;
    detail::update_transforms(g, t, state, cfg.optimize_scale);
    record(detail::local_loss(g, t, state).first);
    state = detail::update_points(g, t);
    std::tie(loss, plain) = detail::local_loss(g, t, state);
    record(loss);
    sol.iterations = it + 1;
    if (before - loss <= cfg.rel_tol * before) {
      sol.converged = true;
      break;
    }
  }

  sol.loss = loss;
  sol.loss_unsquared = plain;
  for (const auto& et : t) {
    sol.edge_transforms.push_back(et.pose);
    sol.edge_scales.push_back(et.scale);
  }
  sol.points = std::move(state.xi);
  for (auto& [v, w] : state.weight) {
    // Report the mean confidence over contributing edges.
    std::vector<int> count(w.size(), 0);
    for (const auto& e : g.edges) {
      for (std::size_t m = 0; m < e.members.size(); ++m) {
        if (e.members[m] != v) continue;
        for (std::size_t i = 0; i < w.size(); ++i) count[i] += e.points[m].is_valid(i) ? 1 : 0;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (count[i] > 0) w.values[i] /= count[i];
    }
    sol.confidence.emplace(v, std::move(w));
  }
  // Each frame takes its pose from the edge whose center is temporally closest.
  for (std::size_t v : g.vertices) {
    std::size_t best = g.edges.size();
    std::size_t best_gap = 0, slot = 0;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const auto& m = g.edges[e].members;
      const auto pos = std::find(m.begin(), m.end(), v);
      if (pos == m.end()) continue;
      const std::size_t c = g.edges[e].center;
      const std::size_t gap = c > v ? c - v : v - c;
      if (best == g.edges.size() || gap < best_gap || (gap == best_gap && c < g.edges[best].center)) {
        best = e;
        best_gap = gap;
        slot = static_cast<std::size_t>(pos - m.begin());
      }
    }
    if (best == g.edges.size()) continue;
    sol.poses[v] = transform_pose(t[best].sim3(), g.edges[best].poses[slot]);
  }
  return sol;
}

/// Frames outside every edge window keep their frontend prediction.
inline void fill_uncovered(LocalSolution& sol, const Submap& submap, const Frontend& frontend) {
  for (std::size_t v : submap.frames) {
    if (sol.points.count(v)) continue;
    const auto& p = frontend.frame(v).prediction;
    sol.points.emplace(v, p.x_world);
    sol.confidence.emplace(v, p.c_world);
    sol.poses[v] = p.pose;
  }
}

inline void write_trace_csv(std::ostream& os, const LocalSolution& sol) {
  os << "iter,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < sol.trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", sol.trace[i]);
    os << i << ',' << buf << '\n';
  }
}

}  // namespace grs
