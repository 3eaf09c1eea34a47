#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "grs/frontend.hpp"
#include "grs/synth.hpp"
#include "test_support.hpp"

namespace grs {
namespace {

// O(n^2) reference for the stride-subsampled, min-of-both-directions score.
double brute_directional(const PointMap& a, const PointMap& b, int stride, double r) {
  std::size_t hits = 0, total = 0;
  for (int row = 0; row < a.height; row += stride) {
    for (int col = 0; col < a.width; col += stride) {
      const std::size_t i = a.index(row, col);
      if (!a.is_valid(i)) continue;
      ++total;
      bool hit = false;
      for (std::size_t j = 0; j < b.size() && !hit; ++j) {
        hit = b.is_valid(j) && (a.points[i] - b.points[j]).squaredNorm() <= r * r;
      }
      hits += hit ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double brute_covisibility(const PointMap& a, const PointMap& b, int stride, double r) {
  return std::min(brute_directional(a, b, stride, r), brute_directional(b, a, stride, r));
}

synth::SceneSpec two_room_walk() {
  synth::SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(4, 3, 2.5)}, {Vec3(4, 0, 0), Vec3(8, 3, 2.5)}};
  s.doors = {{Vec3(3.8, 1.0, 0.0), Vec3(4.2, 2.0, 2.1)}};
  s.obstacles = {{Vec3(1.0, 2.4, 0.0), Vec3(2.0, 3.0, 0.9)}, {Vec3(6.5, 0.0, 0.0), Vec3(7.5, 0.7, 1.2)}};
  s.waypoints = {{Vec3(1.0, 1.5, 1.2), 30.0, -10.0, 30},
                 {Vec3(3.0, 1.5, 1.2), -20.0, -10.0, 30},
                 {Vec3(5.5, 1.5, 1.2), 20.0, -10.0, 30},
                 {Vec3(7.0, 1.8, 1.2), 140.0, -10.0, 1}};
  return s;
}

FramePrediction prediction_from(const PointMap& world) {
  FramePrediction p{world, ConfidenceMap(world.width, world.height), world,
                    ConfidenceMap(world.width, world.height), SE3Pose::identity()};
  return p;
}

TEST(Covisibility, IdenticalIsOneAndDisjointIsZero) {
  std::mt19937_64 rng(41);
  PointMap a(8, 8);
  for (auto& p : a.points) p = testing::random_vector(rng, 1.0);
  FrontendConfig cfg;
  EXPECT_EQ(covisibility(prediction_from(a), prediction_from(a), cfg), 1.0);
  PointMap b = a;
  for (auto& p : b.points) p += Vec3(100, 0, 0);
  EXPECT_EQ(covisibility(prediction_from(a), prediction_from(b), cfg), 0.0);
  PointMap none(4, 4);
  std::fill(none.valid.begin(), none.valid.end(), 0);
  EXPECT_THROW(covisibility(prediction_from(a), prediction_from(none), cfg), InputError);
}

TEST(Covisibility, MatchesBruteForceOnOverlappingViews) {
  const auto seq = synth::generate(two_room_walk());
  FrontendConfig cfg;
  for (auto [i, j] : {std::pair{0, 5}, std::pair{0, 20}, std::pair{10, 40}, std::pair{30, 60}}) {
    const PointMap a = apply(seq.ground_truth[i].pose, seq.camera_points[i]);
    const PointMap b = apply(seq.ground_truth[j].pose, seq.camera_points[j]);
    const double expected = brute_covisibility(a, b, cfg.stride, cfg.radius);
    EXPECT_EQ(covisibility(prediction_from(a), prediction_from(b), cfg), expected) << i << "," << j;
    EXPECT_EQ(covisibility(prediction_from(b), prediction_from(a), cfg), expected);
  }
}

TEST(Covisibility, AddingTargetPointsNeverLowersDirectionalScore) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec3> a, b;
    for (int i = 0; i < 100; ++i) a.push_back(testing::random_vector(rng, 1.0));
    for (int i = 0; i < 50; ++i) b.push_back(testing::random_vector(rng, 1.0));
    double prev = directional_covisibility(a, KdTree(b), 0.2);
    for (int k = 0; k < 5; ++k) {
      for (int i = 0; i < 20; ++i) b.push_back(testing::random_vector(rng, 1.5));
      const double now = directional_covisibility(a, KdTree(b), 0.2);
      EXPECT_GE(now, prev);
      prev = now;
    }
  }
}

TEST(FrontendConfig, ThresholdOrderIsEnforced) {
  FrontendConfig c;
  c.tau_anchor = 0.8;
  c.tau_kf = 0.7;
  EXPECT_THROW(c.validate(), InputError);
  c = FrontendConfig{};
  c.tau_kf = 1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = FrontendConfig{};
  c.radius = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  EXPECT_NO_THROW(FrontendConfig{}.validate());
}

TEST(Frontend, BootstrapThenStaticFramesAreOrdinary) {
  synth::SceneSpec s;
  s.rooms = {{Vec3(0, 0, 0), Vec3(4, 3, 2.5)}};
  s.waypoints = {{Vec3(1, 1.5, 1.2), 0.0, 0.0, 5}, {Vec3(1, 1.5, 1.2), 0.0, 0.0, 1}};
  auto seq = std::make_shared<const synth::SyntheticSequence>(synth::generate(s));
  synth::OraclePredictor oracle(seq, {}, 1);
  Frontend fe(FrontendConfig{}, oracle);
  EXPECT_EQ(fe.process_frame(0), Decision::new_submap);
  for (std::size_t f = 1; f < seq->size(); ++f) EXPECT_EQ(fe.process_frame(f), Decision::ordinary);
  EXPECT_EQ(fe.submaps().size(), 1u);
  EXPECT_EQ(fe.reset_count(), 0u);
  EXPECT_THROW(fe.process_frame(2), InputError);
}

TEST(Frontend, SubmapBoundaryMatchesOfflineCovisibilitySeries) {
  const auto spec = two_room_walk();
  auto seq = std::make_shared<const synth::SyntheticSequence>(synth::generate(spec));
  FrontendConfig cfg;
  // Offline: first frame whose covisibility with frame 0 drops below tau_anchor.
  const PointMap anchor = apply(seq->ground_truth[0].pose, seq->camera_points[0]);
  std::size_t expected = 0;
  for (std::size_t t = 1; t < seq->size(); ++t) {
    const PointMap cur = apply(seq->ground_truth[t].pose, seq->camera_points[t]);
    if (brute_covisibility(cur, anchor, cfg.stride, cfg.radius) < cfg.tau_anchor) {
      expected = t;
      break;
    }
  }
  ASSERT_GT(expected, 0u);

  synth::OraclePredictor oracle(seq, {}, 1);
  Frontend fe(cfg, oracle);
  std::vector<std::size_t> finalized;
  fe.on_submap_finalized = [&](std::size_t id) { finalized.push_back(id); };
  std::size_t first_split = 0;
  for (std::size_t f = 0; f < seq->size(); ++f) {
    if (fe.process_frame(f) == Decision::new_submap && f > 0 && first_split == 0) first_split = f;
  }
  fe.finish();
  EXPECT_EQ(first_split, expected);
  ASSERT_GE(fe.submaps().size(), 2u);
  EXPECT_EQ(finalized.size(), fe.submaps().size());

  // The boundary frame's pose in the old submap equals its ground-truth pose
  // relative to the old anchor.
  const Submap& s0 = fe.submaps()[0];
  ASSERT_TRUE(s0.exit_pose.has_value());
  const SE3Pose truth = compose(inverse(seq->ground_truth[0].pose), seq->ground_truth[*s0.exit_frame].pose);
  EXPECT_LT(testing::pose_distance(*s0.exit_pose, truth), 1e-12);
}

TEST(Frontend, PartitionResetsAndLog) {
  auto seq = std::make_shared<const synth::SyntheticSequence>(synth::generate(two_room_walk()));
  synth::NoiseSpec noise;
  noise.point_sigma = 0.005;
  noise.drift_rotation = Vec3(0, 0.0005, 0);
  synth::OraclePredictor oracle(seq, noise, 2);
  Frontend fe(FrontendConfig{}, oracle);
  std::size_t splits = 0;
  for (std::size_t f = 0; f < seq->size(); ++f) splits += fe.process_frame(f) == Decision::new_submap ? 1 : 0;
  fe.finish();

  // Every reset is a new_submap decision (the bootstrap needs none).
  EXPECT_EQ(fe.reset_count() + 1, splits);
  std::set<std::size_t> seen;
  for (const auto& s : fe.submaps()) {
    EXPECT_TRUE(s.finalized);
    ASSERT_FALSE(s.frames.empty());
    EXPECT_EQ(s.frames.front(), s.anchor);
    EXPECT_EQ(s.keyframes.front(), s.anchor);
    for (auto f : s.frames) EXPECT_TRUE(seen.insert(f).second) << "frame in two submaps";
    for (auto k : s.keyframes) EXPECT_TRUE(fe.frame(k).is_keyframe);
  }
  EXPECT_EQ(seen.size(), seq->size());
  EXPECT_EQ(*seen.rbegin() + 1, seq->size());

  std::ostringstream os;
  fe.write_log(os);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = json_util::Json::parse(line);
    EXPECT_EQ(j.at("frame").get<std::size_t>(), n);
    EXPECT_TRUE(j.contains("cov_kf") && j.contains("cov_anchor") && j.contains("decision"));
    ++n;
  }
  EXPECT_EQ(n, seq->size());
}

}  // namespace
}  // namespace grs
