#pragma once

#include <cstddef>
#include <memory>

#include "grs/geometry.hpp"

namespace grs {

/// Per-frame output of a pointmap predictor. World-frame quantities are
/// expressed in the coordinate frame of the first frame seen since the last
/// state reset.
struct FramePrediction {
  PointMap x_self;
  ConfidenceMap c_self;
  PointMap x_world;
  ConfidenceMap c_world;
  SE3Pose pose;  // world-from-camera
};

inline bool consistent_shapes(const FramePrediction& p) {
  return p.x_self.same_shape(p.x_world) && p.c_self.matches(p.x_self) && p.c_world.matches(p.x_world);
}

/// A recurrent predictor driven frame by frame. Both the learned toy model and
/// the synthetic oracle implement this, so the mapping pipeline is agnostic to
/// which one produced the geometry.
class SequencePredictor {
 public:
  virtual ~SequencePredictor() = default;

  virtual std::size_t frame_count() const = 0;
  virtual double timestamp(std::size_t frame) const = 0;

  /// Feeds frame `frame` through the current state, advancing it.
  virtual FramePrediction step(std::size_t frame) = 0;

  /// Restores the initial latent state.
  virtual void reset() = 0;

  /// An independent predictor over the same frames, in its initial state.
  /// Used to re-run frames under a different context without disturbing this
  /// one.
  virtual std::unique_ptr<SequencePredictor> clone_fresh() const = 0;
};

}  // namespace grs
