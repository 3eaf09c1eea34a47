#pragma once

// Synthetic indoor scenes made of axis-aligned boxes, a pinhole ray caster,
// and an oracle predictor that returns ground-truth pointmaps corrupted by
// scripted noise and drift.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frame.hpp"
#include "grs/geometry.hpp"
#include "grs/io.hpp"
#include "grs/json_util.hpp"
#include "grs/parallel.hpp"
#include "grs/predictor.hpp"

namespace grs::synth {

struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p, double margin = 0.0) const {
    return (p.array() >= min.array() - margin).all() && (p.array() <= max.array() + margin).all();
  }
  bool strictly_contains(const Vec3& p) const {
    return (p.array() > min.array()).all() && (p.array() < max.array()).all();
  }
};

struct Waypoint {
  Vec3 position = Vec3::Zero();
  double yaw_deg = 0.0;    // heading about world +z, 0 looks along +x
  double pitch_deg = 0.0;  // positive looks up
  int frames = 1;          // frames spent moving to the next waypoint
};

struct CameraSpec {
  int width = 32;
  int height = 32;
  double fov_deg = 60.0;  // horizontal

  double focal() const { return 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0); }

  /// Camera-frame ray through the pixel center, scaled so that z = 1. The
  /// camera looks along +z with x right and y down.
  Vec3 ray(int row, int col) const {
    const double f = focal();
    return {(col + 0.5 - 0.5 * width) / f, (row + 0.5 - 0.5 * height) / f, 1.0};
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Box> rooms;
  std::vector<Box> doors;      // openings cut through room walls
  std::vector<Box> obstacles;  // solid furniture
  double surface_density = 40000.0;  // points per square meter (5 mm grid)
  std::vector<Waypoint> waypoints;
  double frame_rate = 1.0;  // frames per second; timestamps are index / rate
  double clearance = 0.1;   // minimum camera distance to walls and obstacles
  CameraSpec camera;

  void validate() const {
    if (rooms.empty()) throw InputError("scene: at least one room is required");
    auto check_box = [](const Box& b, const char* what) {
      if (!((b.max - b.min).array() > 0.0).all()) throw InputError(std::string("scene: degenerate ") + what);
    };
    for (const auto& r : rooms) check_box(r, "room");
    for (const auto& d : doors) check_box(d, "door");
    for (const auto& o : obstacles) check_box(o, "obstacle");
    if (!(surface_density > 0.0)) throw InputError("scene: surface_density must be positive");
    if (!(frame_rate > 0.0)) throw InputError("scene: frame_rate must be positive");
    if (clearance < 0.0) throw InputError("scene: clearance must be non-negative");
    if (waypoints.empty()) throw InputError("scene: trajectory needs at least one waypoint");
    for (const auto& w : waypoints) {
      if (w.frames < 1) throw InputError("scene: waypoint frames must be >= 1");
      if (!(std::abs(w.pitch_deg) < 89.0)) throw InputError("scene: |pitch| must be below 89 degrees");
    }
    if (camera.width < 1 || camera.height < 1) throw InputError("scene: camera resolution must be positive");
    if (!(camera.fov_deg > 0.0 && camera.fov_deg < 180.0)) throw InputError("scene: fov must be in (0, 180)");
  }
};

struct NoiseSpec {
  double point_sigma = 0.0;  // RMS of the 3D point error, meters
  Vec3 drift_rotation = Vec3::Zero();     // rad per frame, rotation vector
  Vec3 drift_translation = Vec3::Zero();  // m per frame
  double confidence_coupling = 1.0;
  double dropout = 0.0;  // fraction of valid pixels reported invalid

  bool has_drift() const { return drift_rotation.norm() > 0.0 || drift_translation.norm() > 0.0; }

  void validate() const {
    if (point_sigma < 0.0 || confidence_coupling < 0.0) throw InputError("noise: values must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("noise: dropout must be in [0, 1)");
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline Box box_from_json(const json_util::Json& j, const char* what) {
  if (!j.is_object() || !j.contains("min") || !j.contains("max")) {
    throw InputError(std::string("scene: ") + what + " needs min and max");
  }
  return {json_util::to_vec3(j.at("min"), what), json_util::to_vec3(j.at("max"), what)};
}

inline json_util::Json box_to_json(const Box& b) {
  return {{"min", json_util::from_vec3(b.min)}, {"max", json_util::from_vec3(b.max)}};
}

inline std::vector<Box> boxes_from_json(const json_util::Json& j, const char* key) {
  std::vector<Box> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array()) throw InputError(std::string("scene: ") + key + " must be an array");
  for (const auto& b : j.at(key)) out.push_back(box_from_json(b, key));
  return out;
}

}  // namespace detail

inline SceneSpec scene_from_json(const json_util::Json& j) {
  using json_util::get_or;
  if (!j.is_object()) throw InputError("scene: expected a JSON object");
  SceneSpec s;
  s.seed = get_or<std::uint64_t>(j, "seed", 0);
  s.rooms = detail::boxes_from_json(j, "rooms");
  s.doors = detail::boxes_from_json(j, "doors");
  s.obstacles = detail::boxes_from_json(j, "obstacles");
  s.surface_density = get_or(j, "surface_density", s.surface_density);
  s.frame_rate = get_or(j, "frame_rate", s.frame_rate);
  s.clearance = get_or(j, "clearance", s.clearance);
  if (j.contains("camera")) {
    const auto& c = j.at("camera");
    s.camera.width = get_or(c, "width", s.camera.width);
    s.camera.height = get_or(c, "height", s.camera.height);
    s.camera.fov_deg = get_or(c, "fov_deg", s.camera.fov_deg);
  }
  if (j.contains("waypoints")) {
    if (!j.at("waypoints").is_array()) throw InputError("scene: waypoints must be an array");
    for (const auto& w : j.at("waypoints")) {
      if (!w.contains("position")) throw InputError("scene: waypoint needs a position");
      Waypoint wp;
      wp.position = json_util::to_vec3(w.at("position"), "waypoint position");
      wp.yaw_deg = get_or(w, "yaw_deg", 0.0);
      wp.pitch_deg = get_or(w, "pitch_deg", 0.0);
      wp.frames = get_or(w, "frames", 1);
      s.waypoints.push_back(wp);
    }
  }
  s.validate();
  return s;
}

inline json_util::Json scene_to_json(const SceneSpec& s) {
  json_util::Json j;
  j["seed"] = s.seed;
  for (const char* key : {"rooms", "doors", "obstacles"}) j[key] = json_util::Json::array();
  for (const auto& b : s.rooms) j["rooms"].push_back(detail::box_to_json(b));
  for (const auto& b : s.doors) j["doors"].push_back(detail::box_to_json(b));
  for (const auto& b : s.obstacles) j["obstacles"].push_back(detail::box_to_json(b));
  j["surface_density"] = s.surface_density;
  j["frame_rate"] = s.frame_rate;
  j["clearance"] = s.clearance;
  j["camera"] = {{"width", s.camera.width}, {"height", s.camera.height}, {"fov_deg", s.camera.fov_deg}};
  j["waypoints"] = json_util::Json::array();
  for (const auto& w : s.waypoints) {
    j["waypoints"].push_back({{"position", json_util::from_vec3(w.position)},
                              {"yaw_deg", w.yaw_deg},
                              {"pitch_deg", w.pitch_deg},
                              {"frames", w.frames}});
  }
  return j;
}

inline NoiseSpec noise_from_json(const json_util::Json& j) {
  using json_util::get_or;
  NoiseSpec n;
  if (j.is_null()) return n;
  n.point_sigma = get_or(j, "point_sigma", 0.0);
  n.drift_rotation = json_util::vec3_or(j, "drift_rotation", Vec3::Zero());
  n.drift_translation = json_util::vec3_or(j, "drift_translation", Vec3::Zero());
  n.confidence_coupling = get_or(j, "confidence_coupling", 1.0);
  n.dropout = get_or(j, "dropout", 0.0);
  n.validate();
  return n;
}

// ---------------------------------------------------------------------------
// Scene geometry

/// Camera orientation for a heading and pitch, world z up.
inline Quaternion look_rotation(double yaw_deg, double pitch_deg) {
  const double y = yaw_deg * std::numbers::pi / 180.0;
  const double p = pitch_deg * std::numbers::pi / 180.0;
  const Vec3 forward(std::cos(p) * std::cos(y), std::cos(p) * std::sin(y), std::sin(p));
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return Quaternion(r);
}

/// Poses along the waypoint script: linear interpolation of position, yaw
/// and pitch, then the final waypoint.
inline std::vector<SE3Pose> script_poses(const SceneSpec& spec) {
  std::vector<SE3Pose> poses;
  const auto& w = spec.waypoints;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    for (int f = 0; f < w[i].frames; ++f) {
      const double a = static_cast<double>(f) / w[i].frames;
      const Vec3 p = (1.0 - a) * w[i].position + a * w[i + 1].position;
      const double yaw = (1.0 - a) * w[i].yaw_deg + a * w[i + 1].yaw_deg;
      const double pitch = (1.0 - a) * w[i].pitch_deg + a * w[i + 1].pitch_deg;
      poses.emplace_back(look_rotation(yaw, pitch), p);
    }
  }
  poses.emplace_back(look_rotation(w.back().yaw_deg, w.back().pitch_deg), w.back().position);
  return poses;
}

/// One axis-aligned rectangle of the scene.
struct Face {
  int axis = 0;
  double value = 0.0;
  Vec3 lo = Vec3::Zero();  // bounds; lo[axis] == hi[axis] == value
  Vec3 hi = Vec3::Zero();
  bool room_wall = false;  // walls can be pierced by doors

  bool covers(const Vec3& p, double eps) const {
    for (int k = 0; k < 3; ++k) {
      if (k == axis) continue;
      if (p(k) < lo(k) - eps || p(k) > hi(k) + eps) return false;
    }
    return true;
  }
};

class Scene {
 public:
  explicit Scene(const SceneSpec& spec) : spec_(spec) {
    spec_.validate();
    for (const auto& r : spec_.rooms) add_box_faces(r, true);
    for (const auto& o : spec_.obstacles) add_box_faces(o, false);
  }

  const SceneSpec& spec() const { return spec_; }
  const std::vector<Face>& faces() const { return faces_; }

  bool in_door(const Vec3& p) const {
    for (const auto& d : spec_.doors) {
      if (d.contains(p, 1e-12)) return true;
    }
    return false;
  }

  /// Nearest ray parameter t > 0 with origin + t * dir on a visible surface.
  std::optional<double> cast(const Vec3& origin, const Vec3& dir) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : faces_) {
      const double d = dir(f.axis);
      if (std::abs(d) < 1e-15) continue;
      const double t = (f.value - origin(f.axis)) / d;
      if (!(t > 1e-9) || t >= best) continue;
      Vec3 p = origin + t * dir;
      p(f.axis) = f.value;
      if (!f.covers(p, 1e-12)) continue;
      if (f.room_wall && in_door(p)) continue;
      best = t;
    }
    if (std::isinf(best)) return std::nullopt;
    return best;
  }

  /// Distance from p to the closest face rectangle (point-to-plane where the
  /// projection lands inside the rectangle).
  double surface_distance(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : faces_) {
      Vec3 q = p;
      q(f.axis) = f.value;
      if (!f.covers(q, 1e-9)) continue;
      best = std::min(best, std::abs(p(f.axis) - f.value));
    }
    return best;
  }

  bool is_free(const Vec3& p) const {
    bool inside = false;
    for (const auto& r : spec_.rooms) {
      if ((p.array() > r.min.array() + spec_.clearance).all() && (p.array() < r.max.array() - spec_.clearance).all()) {
        inside = true;
      }
    }
    if (!inside && !in_door(p)) return false;
    for (const auto& o : spec_.obstacles) {
      if (o.contains(p, spec_.clearance)) return false;
    }
    return true;
  }

  /// Deterministic texture used to give the toy predictor something to see.
  Vec3 texture(const Vec3& p) const {
    const double phase = 0.37 * static_cast<double>(spec_.seed % 1000);
    return {0.5 + 0.25 * std::sin(7.0 * p.x() + phase) + 0.25 * std::sin(5.0 * p.z()),
            0.5 + 0.25 * std::sin(6.0 * p.y() + 2.0 * phase) + 0.25 * std::cos(4.0 * p.x()),
            0.5 + 0.25 * std::cos(8.0 * p.z() + 3.0 * phase) + 0.25 * std::sin(3.0 * p.y())};
  }

 private:
  void add_box_faces(const Box& b, bool room) {
    for (int axis = 0; axis < 3; ++axis) {
      for (double v : {b.min(axis), b.max(axis)}) {
        Face f;
        f.axis = axis;
        f.value = v;
        f.lo = b.min;
        f.hi = b.max;
        f.lo(axis) = f.hi(axis) = v;
        f.room_wall = room;
        faces_.push_back(f);
      }
    }
  }

  SceneSpec spec_;
  std::vector<Face> faces_;
};

/// Throws InputError naming the first frame whose camera leaves free space.
/// The path between consecutive frames is sampled every 2 cm.
inline void check_free_space(const Scene& scene, const std::vector<SE3Pose>& poses) {
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec3& a = poses[i].translation;
    const Vec3& b = i + 1 < poses.size() ? poses[i + 1].translation : a;
    const int steps = std::max(1, static_cast<int>(std::ceil((b - a).norm() / 0.02)));
    for (int s = 0; s < steps; ++s) {
      const Vec3 p = a + (b - a) * (static_cast<double>(s) / steps);
      if (!scene.is_free(p)) {
        std::ostringstream msg;
        msg << "scene: trajectory leaves free space near frame " << i << " at (" << p.x() << ", " << p.y() << ", "
            << p.z() << ")";
        throw InputError(msg.str());
      }
    }
  }
}

struct SyntheticSequence {
  SceneSpec spec;
  Trajectory ground_truth;
  std::vector<PointMap> camera_points;  // per frame, camera frame, z = depth
  std::vector<predictor::Image> images;

  std::size_t size() const { return camera_points.size(); }
};

inline SyntheticSequence generate(const SceneSpec& spec) {
  const Scene scene(spec);
  const auto poses = script_poses(spec);
  check_free_space(scene, poses);
  SyntheticSequence seq;
  seq.spec = spec;
  for (std::size_t i = 0; i < poses.size(); ++i) seq.ground_truth.push_back(i / spec.frame_rate, poses[i]);
  const auto& cam = spec.camera;
  seq.camera_points.assign(poses.size(), PointMap(cam.width, cam.height));
  seq.images.assign(poses.size(), predictor::Image(cam.height, cam.width));
  parallel_for(
      poses.size(),
      [&](std::size_t i) {
        const Mat3 r = poses[i].rotation_matrix();
        PointMap& map = seq.camera_points[i];
        predictor::Image& img = seq.images[i];
        for (int row = 0; row < cam.height; ++row) {
          for (int col = 0; col < cam.width; ++col) {
            const std::size_t idx = map.index(row, col);
            const Vec3 d = cam.ray(row, col);
            const Vec3 dw = r * d;
            const auto t = scene.cast(poses[i].translation, dw);
            if (!t) {
              map.points[idx] = Vec3::Zero();
              map.valid[idx] = 0;
              continue;
            }
            map.points[idx] = *t * d;
            map.valid[idx] = 1;
            const Vec3 c = scene.texture(poses[i].translation + *t * dw);
            for (int ch = 0; ch < 3; ++ch) img.at(row, col, ch) = c(ch);
          }
        }
      },
      1);
  return seq;
}

/// Surface samples on a regular grid of spacing 1/sqrt(density). Wall samples
/// inside door openings or under obstacles are dropped, as are obstacle
/// samples touching a room boundary.
inline PointCloud ground_truth_cloud(const SceneSpec& spec, double density) {
  if (!(density > 0.0)) throw InputError("ground_truth_cloud: density must be positive");
  const Scene scene(spec);
  const double h = 1.0 / std::sqrt(density);
  PointCloud cloud;
  auto in_room_interior = [&](const Vec3& p) {
    for (const auto& r : spec.rooms) {
      if (r.strictly_contains(p)) return true;
    }
    return false;
  };
  for (const auto& f : scene.faces()) {
    const int a = (f.axis + 1) % 3, b = (f.axis + 2) % 3;
    const int na = std::max(1, static_cast<int>(std::floor((f.hi(a) - f.lo(a)) / h)));
    const int nb = std::max(1, static_cast<int>(std::floor((f.hi(b) - f.lo(b)) / h)));
    const double ha = (f.hi(a) - f.lo(a)) / na, hb = (f.hi(b) - f.lo(b)) / nb;
    for (int i = 0; i < na; ++i) {
      for (int j = 0; j < nb; ++j) {
        Vec3 p;
        p(f.axis) = f.value;
        p(a) = f.lo(a) + (i + 0.5) * ha;
        p(b) = f.lo(b) + (j + 0.5) * hb;
        if (f.room_wall) {
          if (scene.in_door(p)) continue;
          bool hidden = false;
          for (const auto& o : spec.obstacles) hidden = hidden || o.contains(p);
          if (hidden) continue;
        } else if (!in_room_interior(p)) {
          continue;
        }
        cloud.push_back(p, 1.0);
      }
    }
  }
  return cloud;
}

inline PointCloud ground_truth_cloud(const SceneSpec& spec) { return ground_truth_cloud(spec, spec.surface_density); }

// ---------------------------------------------------------------------------
// Oracle predictor

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Ground truth expressed relative to the first frame since the last reset,
/// corrupted per NoiseSpec. Drift compounds by left multiplication, one
/// increment per step since the reset. The noise stream depends on (seed,
/// reference frame, frame) only, so re-running a frame in the same context
/// reproduces it exactly.
class OraclePredictor : public SequencePredictor {
 public:
  OraclePredictor(std::shared_ptr<const SyntheticSequence> seq, NoiseSpec noise, std::uint64_t seed)
      : seq_(std::move(seq)), noise_(noise), seed_(seed) {
    noise_.validate();
    delta_ = SE3Pose(so3_exp(noise_.drift_rotation), noise_.drift_translation);
  }

  std::size_t frame_count() const override { return seq_->size(); }
  double timestamp(std::size_t frame) const override { return seq_->ground_truth[frame].timestamp; }

  FramePrediction step(std::size_t frame) override {
    if (frame >= seq_->size()) throw InputError("OraclePredictor: frame index out of range");
    if (!reference_) {
      reference_ = frame;
      drift_ = SE3Pose::identity();
    } else if (noise_.has_drift()) {
      drift_ = compose(delta_, drift_);
    }
    return predict(*reference_, frame, drift_);
  }

  void reset() override { reference_.reset(); }

  std::unique_ptr<SequencePredictor> clone_fresh() const override {
    return std::make_unique<OraclePredictor>(seq_, noise_, seed_);
  }

  /// The prediction for `frame` in the frame of `reference` with the given
  /// accumulated drift. Stateless.
  FramePrediction predict(std::size_t reference, std::size_t frame, const SE3Pose& drift) const {
    const SE3Pose& t_ref = seq_->ground_truth[reference].pose;
    const SE3Pose& t_cur = seq_->ground_truth[frame].pose;
    SE3Pose rel = compose(inverse(t_ref), t_cur);
    if (noise_.has_drift()) rel = compose(drift, rel);

    const PointMap& truth = seq_->camera_points[frame];
    FramePrediction out{truth, ConfidenceMap(truth.width, truth.height), truth,
                        ConfidenceMap(truth.width, truth.height), rel};
    predictor::NormalSampler normal(detail::splitmix64(seed_ ^ detail::splitmix64(reference * 1000003ULL + frame)));
    const double sigma = noise_.point_sigma / std::sqrt(3.0);
    const Mat3 r = rel.rotation_matrix();
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (!truth.is_valid(i)) {
        out.c_self.values[i] = out.c_world.values[i] = 0.0;
        continue;
      }
      const Vec3 n(sigma * normal(), sigma * normal(), sigma * normal());
      // Map a normal draw to a uniform one for the dropout decision.
      const double u = 0.5 * std::erfc(-normal() / std::numbers::sqrt2);
      if (u < noise_.dropout) {
        out.x_self.valid[i] = out.x_world.valid[i] = 0;
        out.c_self.values[i] = out.c_world.values[i] = 0.0;
        continue;
      }
      const Vec3 p = noise_.point_sigma > 0.0 ? Vec3(truth.points[i] + n) : truth.points[i];
      out.x_self.points[i] = p;
      out.x_world.points[i] = r * p + rel.translation;
      const double c = noise_.point_sigma > 0.0
                           ? 1.0 + noise_.confidence_coupling * std::exp(-n.norm() / noise_.point_sigma)
                           : 1.0 + noise_.confidence_coupling;
      out.c_self.values[i] = out.c_world.values[i] = c;
    }
    return out;
  }

  const SyntheticSequence& sequence() const { return *seq_; }
  const NoiseSpec& noise() const { return noise_; }

 private:
  std::shared_ptr<const SyntheticSequence> seq_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  SE3Pose delta_;
  std::optional<std::size_t> reference_;
  SE3Pose drift_;
};

// ---------------------------------------------------------------------------
// Persistence

inline void write_sequence(const std::filesystem::path& dir, const SyntheticSequence& seq) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "scene.json");
    if (!os) throw InputError("cannot write " + (dir / "scene.json").string());
    os << scene_to_json(seq.spec).dump(2) << '\n';
  }
  io::save_tum((dir / "gt_traj.tum").string(), seq.ground_truth);
  char name[32];
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.ply", i);
    PointCloud cloud;
    cloud.append(apply(seq.ground_truth[i].pose, seq.camera_points[i]));
    io::save_ply((dir / name).string(), cloud);
  }
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  json_util::Json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  // A run config carries its scene inline.
  return scene_from_json(j.is_object() && j.contains("scene") ? j.at("scene") : j);
}

/// Reloads a sequence directory by regenerating from its scene.json.
inline SyntheticSequence load_sequence(const std::filesystem::path& dir) {
  return generate(load_scene(dir / "scene.json"));
}

}  // namespace grs::synth
