#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "grs/synth.hpp"

namespace grs::synth {
namespace {

SceneSpec room_scene() {
  SceneSpec s;
  s.seed = 3;
  s.rooms = {{Vec3(0, 0, 0), Vec3(4, 3, 2.5)}};
  s.obstacles = {{Vec3(3, 0, 0), Vec3(4, 1, 1)}};
  s.waypoints = {{Vec3(1, 1.5, 1.2), 0.0, 0.0, 10}, {Vec3(2, 1.8, 1.2), 60.0, -10.0, 1}};
  return s;
}

std::shared_ptr<const SyntheticSequence> make_shared_sequence(const SceneSpec& s) {
  return std::make_shared<const SyntheticSequence>(generate(s));
}

TEST(Synth, StaticPoseGivesIdenticalFrames) {
  SceneSpec s;
  s.rooms = {{Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5)}};
  s.clearance = 0.05;
  s.waypoints = {{Vec3::Zero(), 10.0, 5.0, 4}, {Vec3::Zero(), 10.0, 5.0, 1}};
  const auto seq = generate(s);
  ASSERT_EQ(seq.size(), 5u);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    EXPECT_EQ(seq.camera_points[i].points, seq.camera_points[0].points);
    EXPECT_EQ(seq.camera_points[i].valid, seq.camera_points[0].valid);
    EXPECT_EQ(seq.images[i].rgb, seq.images[0].rgb);
  }
  EXPECT_EQ(seq.ground_truth[3].timestamp, 3.0);
}

TEST(Synth, WallAheadAtTwoMetersGivesDepthTwo) {
  SceneSpec s;
  s.rooms = {{Vec3(-3, -3, -3), Vec3(2, 3, 3)}};
  s.waypoints = {{Vec3::Zero(), 0.0, 0.0, 1}};
  const auto seq = generate(s);
  const PointMap& m = seq.camera_points[0];
  const std::size_t center = m.index(s.camera.height / 2, s.camera.width / 2);
  ASSERT_TRUE(m.is_valid(center));
  EXPECT_EQ(m.points[center].z(), 2.0);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m.points[i].z(), 2.0, 1e-12);
}

TEST(Synth, RenderedPointsLieOnSurfaces) {
  const SceneSpec s = room_scene();
  const auto seq = generate(s);
  const Scene scene(s);
  double worst = 0.0;
  for (std::size_t f = 0; f < seq.size(); ++f) {
    const PointMap world = apply(seq.ground_truth[f].pose, seq.camera_points[f]);
    for (std::size_t i = 0; i < world.size(); ++i) {
      if (world.is_valid(i)) worst = std::max(worst, scene.surface_distance(world.points[i]));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Synth, CameraLooksAlongHeading) {
  const Quaternion q = look_rotation(90.0, 0.0);
  EXPECT_LT((q * Vec3::UnitZ() - Vec3::UnitY()).norm(), 1e-12);  // forward
  EXPECT_LT((q * Vec3::UnitY() + Vec3::UnitZ()).norm(), 1e-12);  // image down is world down
}

TEST(Synth, GenerationIsDeterministic) {
  const auto a = generate(room_scene());
  const auto b = generate(room_scene());
  for (std::size_t f = 0; f < a.size(); ++f) {
    EXPECT_EQ(a.camera_points[f].points, b.camera_points[f].points);
    EXPECT_EQ(a.images[f].rgb, b.images[f].rgb);
  }
  EXPECT_EQ(io::to_tum_string(a.ground_truth), io::to_tum_string(b.ground_truth));
}

TEST(Synth, TrajectoryThroughWallIsRejected) {
  SceneSpec s = room_scene();
  s.waypoints = {{Vec3(1, 1.5, 1.2), 0.0, 0.0, 10}, {Vec3(6, 1.5, 1.2), 0.0, 0.0, 1}};
  EXPECT_THROW(generate(s), InputError);
  s.waypoints = {{Vec3(3.5, 0.5, 0.5), 0.0, 0.0, 1}};  // inside the obstacle
  EXPECT_THROW(generate(s), InputError);
}

TEST(Synth, DoorConnectsRooms) {
  SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(3, 3, 2.5)}, {Vec3(3, 0, 0), Vec3(6, 3, 2.5)}};
  s.doors = {{Vec3(2.8, 1.0, 0.0), Vec3(3.2, 2.0, 2.1)}};
  s.waypoints = {{Vec3(1.5, 1.5, 1.2), 0.0, 0.0, 20}, {Vec3(4.5, 1.5, 1.2), 0.0, 0.0, 1}};
  const auto seq = generate(s);
  // From the first room, the central rays pass the door and hit the far wall of the second.
  const PointMap& m = seq.camera_points[0];
  const std::size_t center = m.index(s.camera.height / 2, s.camera.width / 2);
  EXPECT_NEAR(m.points[center].z(), 4.5, 1e-12);
  s.doors.clear();
  EXPECT_THROW(generate(s), InputError);
}

TEST(Synth, SceneJsonRoundTrip) {
  SceneSpec s = room_scene();
  s.doors = {{Vec3(1, 2, 3), Vec3(2, 3, 4)}};
  const auto j = scene_to_json(s);
  EXPECT_EQ(scene_to_json(scene_from_json(j)).dump(), j.dump());
  auto bad = j;
  bad["rooms"][0]["max"] = {0, 0, 0};
  EXPECT_THROW(scene_from_json(bad), InputError);
}

TEST(Synth, GroundTruthCloudLiesOnVisibleSurfaces) {
  SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(2, 1, 1)}};
  s.waypoints = {{Vec3(1, 0.5, 0.5), 0.0, 0.0, 1}};
  const PointCloud c = ground_truth_cloud(s, 100.0);
  // Faces: 2 of 2x1, 2 of 2x1, 2 of 1x1 at 10 cm spacing.
  EXPECT_EQ(c.size(), 2u * 200 + 2u * 200 + 2u * 100);
  const Scene scene(s);
  for (const auto& p : c.points) EXPECT_LT(scene.surface_distance(p), 1e-12);
  // Obstacle sides against walls and floors are not sampled.
  s.obstacles = {{Vec3(0, 0, 0), Vec3(0.5, 0.5, 0.5)}};
  const PointCloud with = ground_truth_cloud(s, 100.0);
  for (const auto& p : with.points) EXPECT_FALSE(s.obstacles[0].strictly_contains(p));
}

TEST(Oracle, ZeroNoiseEqualsGroundTruthExactly) {
  const auto seq = make_shared_sequence(room_scene());
  OraclePredictor oracle(seq, NoiseSpec{}, 1);
  const SE3Pose t0 = seq->ground_truth[0].pose;
  for (std::size_t f = 0; f < seq->size(); ++f) {
    const FramePrediction p = oracle.step(f);
    const SE3Pose rel = compose(inverse(t0), seq->ground_truth[f].pose);
    EXPECT_EQ(p.pose.translation, rel.translation);
    EXPECT_EQ(p.pose.rotation.coeffs(), rel.rotation.coeffs());
    EXPECT_EQ(p.x_self.points, seq->camera_points[f].points);
    EXPECT_EQ(p.x_self.valid, seq->camera_points[f].valid);
    const PointMap expected = apply(rel, seq->camera_points[f]);
    EXPECT_EQ(p.x_world.points, expected.points);
  }
  EXPECT_THROW(oracle.step(seq->size()), InputError);
}

TEST(Oracle, TranslationDriftAccumulatesLinearly) {
  SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(4, 3, 2.5)}};
  s.waypoints = {{Vec3(1, 1.5, 1.2), 0.0, 0.0, 100}, {Vec3(2, 1.5, 1.2), 0.0, 0.0, 1}};
  const auto seq = make_shared_sequence(s);
  NoiseSpec n;
  n.drift_translation = Vec3(0, 0.001, 0);
  OraclePredictor oracle(seq, n, 1);
  FramePrediction p;
  for (std::size_t f = 0; f <= 100; ++f) p = oracle.step(f);
  const SE3Pose rel = compose(inverse(seq->ground_truth[0].pose), seq->ground_truth[100].pose);
  const Vec3 offset = p.pose.translation - rel.translation;
  EXPECT_NEAR(offset.y(), 0.1, 1e-12);
  EXPECT_NEAR(offset.x(), 0.0, 1e-12);
  EXPECT_NEAR(offset.z(), 0.0, 1e-12);
  // Reset restarts the drift and the reference frame.
  oracle.reset();
  const FramePrediction q = oracle.step(50);
  EXPECT_EQ(q.pose.translation.norm(), 0.0);
}

TEST(Oracle, PointNoiseRmsMatchesSpec) {
  SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(4, 3, 2.5)}};
  s.waypoints = {{Vec3(1, 1.5, 1.2), 0.0, 0.0, 120}, {Vec3(1, 1.5, 1.2), 0.0, 0.0, 1}};
  const auto seq = make_shared_sequence(s);
  NoiseSpec n;
  n.point_sigma = 0.01;
  OraclePredictor oracle(seq, n, 9);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t f = 0; f < seq->size(); ++f) {
    const FramePrediction p = oracle.step(f);
    for (std::size_t i = 0; i < p.x_self.size(); ++i) {
      if (!p.x_self.is_valid(i)) continue;
      sum += (p.x_self.points[i] - seq->camera_points[f].points[i]).squaredNorm();
      ++count;
    }
  }
  ASSERT_GE(count, 100000u);
  EXPECT_NEAR(std::sqrt(sum / count), 0.01, 0.0005);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) r[order[i]] = static_cast<double>(i);
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n - 1) / 2;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  return cov / std::sqrt(va * vb);
}

TEST(Oracle, ConfidenceFallsWithError) {
  const auto seq = make_shared_sequence(room_scene());
  NoiseSpec n;
  n.point_sigma = 0.02;
  n.drift_rotation = Vec3(0, 0.001, 0);
  OraclePredictor oracle(seq, n, 4);
  for (std::size_t f = 0; f < seq->size(); ++f) {
    const FramePrediction p = oracle.step(f);
    std::vector<double> conf, err;
    for (std::size_t i = 0; i < p.x_self.size(); ++i) {
      if (!p.x_self.is_valid(i)) continue;
      conf.push_back(p.c_self.values[i]);
      err.push_back((p.x_self.points[i] - seq->camera_points[f].points[i]).norm());
      EXPECT_GT(p.c_world.values[i], 1.0);
    }
    EXPECT_LT(spearman(conf, err), 0.0) << f;
  }
}

TEST(Oracle, DropoutFractionAndDeterminism) {
  const auto seq = make_shared_sequence(room_scene());
  NoiseSpec n;
  n.point_sigma = 0.005;
  n.dropout = 0.25;
  OraclePredictor a(seq, n, 5);
  auto b = a.clone_fresh();
  std::size_t dropped = 0, total = 0;
  for (std::size_t f = 0; f < seq->size(); ++f) {
    const FramePrediction pa = a.step(f);
    const FramePrediction pb = b->step(f);
    EXPECT_EQ(pa.x_world.points, pb.x_world.points);
    EXPECT_EQ(pa.c_world.values, pb.c_world.values);
    for (std::size_t i = 0; i < pa.x_self.size(); ++i) {
      if (!seq->camera_points[f].is_valid(i)) continue;
      ++total;
      dropped += pa.x_self.is_valid(i) ? 0 : 1;
    }
  }
  const double frac = static_cast<double>(dropped) / total;
  const double bound = 5.0 * std::sqrt(0.25 * 0.75 / total);
  EXPECT_NEAR(frac, 0.25, bound);
}

TEST(Synth, SequenceDirectoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "grs_synth_roundtrip";
  std::filesystem::remove_all(dir);
  const auto seq = generate(room_scene());
  write_sequence(dir, seq);
  EXPECT_TRUE(std::filesystem::exists(dir / "gt_traj.tum"));
  EXPECT_TRUE(std::filesystem::exists(dir / "frame_00010.ply"));
  const auto back = load_sequence(dir);
  EXPECT_EQ(io::to_tum_string(back.ground_truth), io::to_tum_string(io::load_tum((dir / "gt_traj.tum").string())));
  const PointCloud c = io::load_ply((dir / "frame_00003.ply").string());
  EXPECT_EQ(c.size(), seq.camera_points[3].valid_count());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace grs::synth
