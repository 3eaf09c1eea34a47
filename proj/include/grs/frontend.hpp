#pragma once

// Per-frame keyframe / submap policy driven by pointmap covisibility.

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frame.hpp"
#include "grs/json_util.hpp"
#include "grs/nearest_neighbor.hpp"

namespace grs {

struct FrontendConfig {
  double tau_kf = 0.7;
  double tau_anchor = 0.3;
  double tau_loop = 0.5;
  double radius = 0.05;  // meters
  int stride = 4;        // pixels

  void validate() const {
    if (!(tau_anchor > 0.0 && tau_anchor <= tau_kf && tau_kf < 1.0)) {
      throw InputError("frontend: need 0 < tau_anchor <= tau_kf < 1");
    }
    if (!(tau_loop > 0.0 && tau_loop < 1.0)) throw InputError("frontend: tau_loop must be in (0, 1)");
    if (!(radius > 0.0)) throw InputError("frontend: covisibility radius must be positive");
    if (stride < 1) throw InputError("frontend: stride must be >= 1");
  }
};

inline FrontendConfig frontend_config_from_json(const json_util::Json& j) {
  using json_util::get_or;
  FrontendConfig c;
  c.tau_kf = get_or(j, "tau_kf", c.tau_kf);
  c.tau_anchor = get_or(j, "tau_anchor", c.tau_anchor);
  c.tau_loop = get_or(j, "tau_loop", c.tau_loop);
  c.radius = get_or(j, "radius", c.radius);
  c.stride = get_or(j, "stride", c.stride);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Covisibility

/// Stride-subsampled query points plus a search tree over all valid points
/// of one pointmap.
class CovisibilityIndex {
 public:
  CovisibilityIndex(const PointMap& map, int stride) : tree_(valid_points(map)) {
    for (int r = 0; r < map.height; r += stride) {
      for (int c = 0; c < map.width; c += stride) {
        const std::size_t i = map.index(r, c);
        if (map.is_valid(i)) samples_.push_back(map.points[i]);
      }
    }
    // A sparse map may have nothing on the stride grid.
    if (samples_.empty()) samples_ = tree_.points();
    if (samples_.empty()) throw InputError("covisibility: pointmap has no valid points");
  }

  const std::vector<Vec3>& samples() const { return samples_; }
  const KdTree& tree() const { return tree_; }

 private:
  static std::vector<Vec3> valid_points(const PointMap& map) {
    std::vector<Vec3> pts;
    pts.reserve(map.valid_count());
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map.is_valid(i)) pts.push_back(map.points[i]);
    }
    return pts;
  }

  KdTree tree_;
  std::vector<Vec3> samples_;
};

/// Fraction of `queries` with a point of `target` within `radius`.
inline double directional_covisibility(const std::vector<Vec3>& queries, const KdTree& target, double radius) {
  if (queries.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& q : queries) hits += target.any_within(q, radius) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

inline double covisibility(const CovisibilityIndex& a, const CovisibilityIndex& b, double radius) {
  return std::min(directional_covisibility(a.samples(), b.tree(), radius),
                  directional_covisibility(b.samples(), a.tree(), radius));
}

inline double covisibility(const FramePrediction& a, const FramePrediction& b, const FrontendConfig& cfg) {
  const CovisibilityIndex ia(a.x_world, cfg.stride), ib(b.x_world, cfg.stride);
  return covisibility(ia, ib, cfg.radius);
}

// ---------------------------------------------------------------------------
// Frames and submaps

enum class Decision { ordinary, new_keyframe, new_submap };

inline const char* to_string(Decision d) {
  switch (d) {
    case Decision::ordinary:
      return "ordinary";
    case Decision::new_keyframe:
      return "new_keyframe";
    case Decision::new_submap:
      return "new_submap";
  }
  return "?";
}

struct FrameRecord {
  std::size_t id = 0;
  double timestamp = 0.0;
  FramePrediction prediction;  // in the owning submap's frame
  bool is_keyframe = false;
  std::size_t submap = 0;
};

struct Submap {
  std::size_t id = 0;
  std::size_t anchor = 0;
  std::vector<std::size_t> keyframes;
  std::vector<std::size_t> frames;
  SE3Pose pose;  // world-from-submap
  bool finalized = false;
  SE3Pose entry_pose;  // the anchor's predicted pose in this submap's frame
  // The frame that opened the next submap, run once more through this
  // submap's state before the reset, and its pose in this submap's frame.
  std::optional<std::size_t> exit_frame;
  std::optional<SE3Pose> exit_pose;
};

struct DecisionRecord {
  std::size_t frame = 0;
  Decision decision = Decision::ordinary;
  std::optional<double> cov_kf;
  std::optional<double> cov_anchor;
};

inline std::string to_json_line(const DecisionRecord& r) {
  json_util::Json j;
  j["frame"] = r.frame;
  j["decision"] = to_string(r.decision);
  j["cov_kf"] = r.cov_kf ? json_util::Json(*r.cov_kf) : json_util::Json(nullptr);
  j["cov_anchor"] = r.cov_anchor ? json_util::Json(*r.cov_anchor) : json_util::Json(nullptr);
  return j.dump();
}

class Frontend {
 public:
  Frontend(const FrontendConfig& cfg, SequencePredictor& predictor) : cfg_(cfg), predictor_(predictor) {
    cfg_.validate();
  }

  /// Called with the submap id whenever a submap is closed.
  std::function<void(std::size_t)> on_submap_finalized;

  Decision process_frame(std::size_t frame) {
    if (!frames_.empty() && frame <= frames_.back().id) throw InputError("frontend: frame ids must increase");
    FramePrediction pred = predictor_.step(frame);
    if (submaps_.empty()) {
      open_submap(frame, std::move(pred));
      log_.push_back({frame, Decision::new_submap, std::nullopt, std::nullopt});
      return Decision::new_submap;
    }

    std::optional<CovisibilityIndex> index;
    double cov_anchor = 0.0, cov_kf = 0.0;
    if (pred.x_world.valid_count() > 0) {
      index.emplace(pred.x_world, cfg_.stride);
      cov_anchor = covisibility(*index, *anchor_index_, cfg_.radius);
      cov_kf = covisibility(*index, *keyframe_index_, cfg_.radius);
    }

    Decision decision = Decision::ordinary;
    if (cov_anchor < cfg_.tau_anchor) {
      decision = Decision::new_submap;
      Submap& old = submaps_.back();
      old.exit_frame = frame;
      old.exit_pose = pred.pose;
      finalize_current();
      predictor_.reset();
      ++reset_count_;
      open_submap(frame, predictor_.step(frame));
    } else {
      Submap& current = submaps_.back();
      const bool keyframe = cov_kf < cfg_.tau_kf;
      if (keyframe) {
        decision = Decision::new_keyframe;
        current.keyframes.push_back(frame);
        keyframe_index_ = std::make_shared<CovisibilityIndex>(std::move(*index));
      }
      current.frames.push_back(frame);
      frames_.push_back({frame, predictor_.timestamp(frame), std::move(pred), keyframe, current.id});
    }
    log_.push_back({frame, decision, cov_kf, cov_anchor});
    return decision;
  }

  /// Closes the last submap. Safe to call more than once.
  void finish() {
    if (!submaps_.empty() && !submaps_.back().finalized) finalize_current();
  }

  const FrontendConfig& config() const { return cfg_; }
  const std::vector<Submap>& submaps() const { return submaps_; }
  std::vector<Submap>& submaps() { return submaps_; }
  const std::vector<FrameRecord>& frames() const { return frames_; }
  const std::vector<DecisionRecord>& log() const { return log_; }
  std::size_t reset_count() const { return reset_count_; }

  const FrameRecord& frame(std::size_t id) const {
    const auto it = std::lower_bound(frames_.begin(), frames_.end(), id,
                                     [](const FrameRecord& f, std::size_t v) { return f.id < v; });
    if (it == frames_.end() || it->id != id) throw InputError("frontend: unknown frame id");
    return *it;
  }

  void write_log(std::ostream& os) const {
    for (const auto& r : log_) os << to_json_line(r) << '\n';
  }

 private:
  void open_submap(std::size_t frame, FramePrediction pred) {
    Submap s;
    s.id = submaps_.size();
    s.anchor = frame;
    s.keyframes = {frame};
    s.frames = {frame};
    s.entry_pose = pred.pose;
    submaps_.push_back(s);
    if (pred.x_world.valid_count() > 0) {
      anchor_index_ = std::make_shared<CovisibilityIndex>(pred.x_world, cfg_.stride);
    } else {
      anchor_index_.reset();
    }
    keyframe_index_ = anchor_index_;
    frames_.push_back({frame, predictor_.timestamp(frame), std::move(pred), true, s.id});
    // Without an anchor index every later frame scores zero and splits.
    if (!anchor_index_) anchor_index_ = keyframe_index_ = empty_index();
  }

  void finalize_current() {
    submaps_.back().finalized = true;
    if (on_submap_finalized) on_submap_finalized(submaps_.back().id);
  }

  static std::shared_ptr<CovisibilityIndex> empty_index() {
    PointMap far(1, 1);
    far.points[0] = Vec3::Constant(std::numeric_limits<double>::max());
    return std::make_shared<CovisibilityIndex>(far, 1);
  }

  FrontendConfig cfg_;
  SequencePredictor& predictor_;
  std::vector<Submap> submaps_;
  std::vector<FrameRecord> frames_;
  std::vector<DecisionRecord> log_;
  std::shared_ptr<CovisibilityIndex> anchor_index_;
  std::shared_ptr<CovisibilityIndex> keyframe_index_;
  std::size_t reset_count_ = 0;
};

}  // namespace grs
