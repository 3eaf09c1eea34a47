#pragma once

// Full mapping pipeline: frontend, per-submap local alignment, incremental
// pose graph with loop closure, and global map assembly.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/eval.hpp"
#include "grs/frame.hpp"
#include "grs/frontend.hpp"
#include "grs/json_util.hpp"
#include "grs/local_align.hpp"
#include "grs/loop_closure.hpp"
#include "grs/posegraph.hpp"

namespace grs {

struct PipelineConfig {
  FrontendConfig frontend;
  LocalAlignConfig local;
  PoseGraphConfig posegraph;
  LoopConfig loop;
  bool loop_closure = true;

  void validate() const {
    frontend.validate();
    local.validate();
    posegraph.validate();
    loop.validate();
  }
};

/// One block per module: "frontend", "local_align", "posegraph", "loop".
/// The loop threshold, radius and stride follow the frontend block.
inline PipelineConfig pipeline_config_from_json(const json_util::Json& j) {
  using json_util::get_or;
  PipelineConfig c;
  const json_util::Json empty = json_util::Json::object();
  auto block = [&](const char* key) -> const json_util::Json& {
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) throw InputError(std::string("config block '") + key + "' must be an object");
    return j.at(key);
  };
  c.frontend = frontend_config_from_json(block("frontend"));
  c.local = local_align_config_from_json(block("local_align"));
  c.posegraph = posegraph_config_from_json(block("posegraph"));
  c.loop = LoopConfig::from_frontend(c.frontend);
  const auto& lj = block("loop");
  c.loop_closure = get_or(lj, "enabled", c.loop_closure);
  c.loop.search_radius = get_or(lj, "search_radius", c.loop.search_radius);
  c.loop.min_submap_gap = get_or(lj, "min_submap_gap", c.loop.min_submap_gap);
  c.loop.max_candidates = get_or(lj, "max_candidates", c.loop.max_candidates);
  c.loop.max_camera_distance = get_or(lj, "max_camera_distance", c.loop.max_camera_distance);
  c.loop.max_view_angle_deg = get_or(lj, "max_view_angle_deg", c.loop.max_view_angle_deg);
  c.validate();
  return c;
}

struct GlobalMap {
  PointCloud cloud;
  Trajectory trajectory;
};

/// World cloud and trajectory from refined submaps placed at their graph
/// poses. `frames` supplies timestamps (sorted by id).
inline GlobalMap assemble_global_map(const std::vector<Submap>& submaps, const PoseGraph& graph,
                                     const std::vector<LocalSolution>& local, const std::vector<FrameRecord>& frames) {
  if (local.size() != submaps.size()) throw InputError("assemble_global_map: one local solution per submap expected");
  auto timestamp = [&](std::size_t id) {
    const auto it = std::lower_bound(frames.begin(), frames.end(), id,
                                     [](const FrameRecord& f, std::size_t v) { return f.id < v; });
    if (it == frames.end() || it->id != id) throw InputError("assemble_global_map: unknown frame");
    return it->timestamp;
  };
  std::vector<StampedPose> poses;
  GlobalMap m;
  for (std::size_t k = 0; k < submaps.size(); ++k) {
    const Submap& s = submaps[k];
    const LocalSolution& sol = local[k];
    if (sol.submap != s.id) throw InputError("assemble_global_map: local solution order mismatch");
    const SE3Pose t = graph.node(s.id);
    for (std::size_t f : s.frames) {
      const auto p = sol.points.find(f);
      const auto c = sol.confidence.find(f);
      if (p != sol.points.end()) {
        m.cloud.append(apply(t, p->second), c != sol.confidence.end() ? &c->second : nullptr);
      }
      poses.push_back({timestamp(f), compose(t, sol.poses.at(f))});
    }
  }
  std::sort(poses.begin(), poses.end(),
            [](const StampedPose& a, const StampedPose& b) { return a.timestamp < b.timestamp; });
  for (const auto& p : poses) m.trajectory.push_back(p.timestamp, p.pose);
  return m;
}

struct PipelineResult {
  std::vector<Submap> submaps;
  std::vector<LocalSolution> local;
  std::vector<FrameRecord> frames;
  std::vector<DecisionRecord> log;
  std::size_t reset_count = 0;
  PoseGraph graph;      // with loop closures
  PoseGraph open_loop;  // sequential edges only
  std::vector<LoopCandidate> loops;
  std::vector<LmReport> lm_reports;  // one per loop closure
  GlobalMap map;
  GlobalMap open_loop_map;
};

/// Runs every frame of the predictor's sequence through the pipeline.
inline PipelineResult run_pipeline(SequencePredictor& predictor, const PipelineConfig& cfg) {
  cfg.validate();
  if (predictor.frame_count() == 0) throw InputError("run_pipeline: empty sequence");
  PipelineResult r;
  Frontend fe(cfg.frontend, predictor);
  KeyframeDatabase db;
  const Mat6 seq_info = cfg.posegraph.sequential_weight * Mat6::Identity();
  const Mat6 loop_info = cfg.posegraph.loop_weight * Mat6::Identity();

  fe.on_submap_finalized = [&](std::size_t id) {
    const Submap& s = fe.submaps()[id];
    auto g = build_graph(s, cfg.local.window);
    observe_edges(g, predictor, fe);
    LocalSolution sol = optimize_local(g, cfg.local);
    fill_uncovered(sol, s, fe);
    db.add_submap(s, sol, cfg.loop.stride);
    r.local.push_back(std::move(sol));

    if (id == 0) {
      for (PoseGraph* pg : {&r.graph, &r.open_loop}) {
        pg->add_node(0, SE3Pose::identity());
        pg->set_prior({0, SE3Pose::identity(), cfg.posegraph.prior_weight * Mat6::Identity()});
      }
      return;
    }
    const PoseGraphEdge seq = sequential_constraint(fe.submaps()[id - 1], s, seq_info);
    incremental_update(r.graph, seq, cfg.posegraph.lm);
    incremental_update(r.open_loop, seq, cfg.posegraph.lm);
    if (!cfg.loop_closure) return;
    for (const auto& loop : detect_loops(id, db, r.graph, cfg.loop)) {
      r.loops.push_back(loop);
      r.lm_reports.push_back(*incremental_update(r.graph, loop.edge(loop_info), cfg.posegraph.lm));
    }
  };

  for (std::size_t f = 0; f < predictor.frame_count(); ++f) fe.process_frame(f);
  fe.finish();

  r.submaps = fe.submaps();
  for (auto& s : r.submaps) s.pose = r.graph.node(s.id);
  r.frames = fe.frames();
  r.log = fe.log();
  r.reset_count = fe.reset_count();
  r.map = assemble_global_map(r.submaps, r.graph, r.local, r.frames);
  r.open_loop_map = assemble_global_map(r.submaps, r.open_loop, r.local, r.frames);
  return r;
}

inline json_util::Json submaps_to_json(const PipelineResult& r) {
  using json_util::Json;
  Json subs = Json::array();
  for (std::size_t k = 0; k < r.submaps.size(); ++k) {
    const Submap& s = r.submaps[k];
    const LocalSolution& sol = r.local[k];
    subs.push_back({{"id", s.id},
                    {"anchor", s.anchor},
                    {"frames", s.frames},
                    {"keyframes", s.keyframes},
                    {"pose", json_util::pose_to_json(s.pose)},
                    {"local_loss", sol.loss},
                    {"local_loss_unsquared", sol.loss_unsquared},
                    {"local_iterations", sol.iterations},
                    {"local_converged", sol.converged}});
  }
  Json loops = Json::array();
  for (std::size_t k = 0; k < r.loops.size(); ++k) {
    const auto& l = r.loops[k];
    loops.push_back({{"query_submap", l.query_submap},
                     {"match_submap", l.match_submap},
                     {"query_keyframe", l.query_keyframe},
                     {"match_keyframe", l.match_keyframe},
                     {"score", l.score},
                     {"relative", json_util::pose_to_json(l.relative)},
                     {"cost_before", r.lm_reports[k].initial_cost},
                     {"cost_after", r.lm_reports[k].final_cost}});
  }
  return {{"submaps", subs}, {"loops", loops}, {"resets", r.reset_count}};
}

}  // namespace grs
