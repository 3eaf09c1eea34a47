#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "grs/eval.hpp"
#include "grs/io.hpp"
#include "grs/json_util.hpp"
#include "grs/posegraph.hpp"

namespace fs = std::filesystem;

namespace grs {
namespace {

const fs::path kData = GRS_TEST_DATA_DIR;
const fs::path kConfigs = GRS_CONFIG_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("grs_cli_" + std::string(info->name()) + "_" + std::to_string(getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the tool; stderr lands in err_.
  int run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(GRS_SLAM_BIN) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    err_ = slurp(err);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  json_util::Json metrics(const fs::path& out) { return json_util::Json::parse(slurp(out / "metrics.json")); }

  fs::path dir_;
  std::string err_;
};

TEST_F(Cli, GenerateWritesSequenceDeterministically) {
  const std::string cfg = (kData / "small_loop.json").string();
  ASSERT_EQ(run("generate --config " + cfg + " --out " + (dir_ / "a").string()), 0) << err_;
  ASSERT_EQ(run("generate --config " + cfg + " --out " + (dir_ / "b").string()), 0) << err_;
  EXPECT_TRUE(fs::exists(dir_ / "a" / "gt_traj.tum"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "scene.json"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "frame_00000.ply"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / e.path().filename())) << e.path().filename();
  }
  EXPECT_GT(files, 100u);
}

TEST_F(Cli, GenerateRejectsTrajectoryThroughWall) {
  EXPECT_EQ(run("generate --config " + (kData / "wall_crossing_scene.json").string() + " --out " +
                (dir_ / "w").string()),
            2);
  EXPECT_NE(err_.find("frame"), std::string::npos) << err_;
  EXPECT_NE(err_.find("\"exit_code\":2"), std::string::npos) << err_;
}

TEST_F(Cli, RunNoiselessSingleRoom) {
  const fs::path out = dir_ / "run";
  ASSERT_EQ(run("run --config " + (kConfigs / "single_room.json").string() + " --out " + out.string()), 0) << err_;
  for (const char* f : {"est_traj.tum", "map.ply", "submaps.json", "posegraph.g2o", "metrics.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto m = metrics(out);
  EXPECT_LT(m.at("ate_rmse_m").get<double>(), 1e-6);
  EXPECT_TRUE(m.contains("open_loop_ate_m"));
  // Artifacts parse with the library readers.
  EXPECT_EQ(io::load_tum((out / "est_traj.tum").string()).size(), m.at("frame_count").get<std::size_t>());
  EXPECT_EQ(io::load_ply((out / "map.ply").string()).size(), m.at("map_points").get<std::size_t>());
  EXPECT_EQ(load_g2o((out / "posegraph.g2o").string()).nodes().size(), m.at("submaps").get<std::size_t>());

  const std::string first = slurp(out / "metrics.json");
  ASSERT_EQ(run("run --config " + (kConfigs / "single_room.json").string() + " --out " + out.string()), 0);
  EXPECT_EQ(slurp(out / "metrics.json"), first);
}

TEST_F(Cli, RunDriftingLoopReportsOpenLoopAndFinalAte) {
  const fs::path out = dir_ / "loop";
  ASSERT_EQ(run("run --config " + (kData / "small_loop.json").string() + " --out " + out.string() + " --threads 2"),
            0)
      << err_;
  const auto m = metrics(out);
  const double final_ate = m.at("ate_rmse_m").get<double>();
  const double open_ate = m.at("open_loop_ate_m").get<double>();
  EXPECT_LT(final_ate, open_ate);
  EXPECT_GE(m.at("loops").get<int>(), 1);
}

TEST_F(Cli, RunToyPredictorEmitsAllArtifacts) {
  const fs::path out = dir_ / "toy";
  ASSERT_EQ(run("run --config " + (kConfigs / "toy_smoke.json").string() + " --out " + out.string()), 0) << err_;
  for (const char* f : {"est_traj.tum", "map.ply", "submaps.json", "posegraph.g2o", "metrics.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(metrics(out).at("predictor"), "toy");
}

TEST_F(Cli, PredictorAndSeedFlagsOverrideConfig) {
  const fs::path out = dir_ / "o";
  ASSERT_EQ(run("run --config " + (kConfigs / "toy_smoke.json").string() + " --predictor oracle --seed 5 --out " +
                out.string()),
            0)
      << err_;
  EXPECT_EQ(metrics(out).at("predictor"), "oracle");
}

TEST_F(Cli, EvalIdenticalFilesGiveZeroAte) {
  const std::string gt = (kData / "ate_fixture_gt.tum").string();
  ASSERT_EQ(run("eval --est " + gt + " --gt " + gt + " --out " + dir_.string()), 0) << err_;
  EXPECT_LT(metrics(dir_).at("ate_rmse_m").get<double>(), 1e-12);
  const std::string svg = slurp(dir_ / "trajectory.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
}

TEST_F(Cli, EvalMatchesLibraryExactly) {
  const fs::path est = kData / "ate_fixture_est.tum", gt = kData / "ate_fixture_gt.tum";
  ASSERT_EQ(run("eval --est " + est.string() + " --gt " + gt.string() + " --out " + dir_.string()), 0) << err_;
  const double expected = eval::ate_rmse(io::load_tum(est.string()), io::load_tum(gt.string()), true);
  EXPECT_EQ(metrics(dir_).at("ate_rmse_m").get<double>(), expected);

  ASSERT_EQ(run("eval --no-align --est " + est.string() + " --gt " + gt.string() + " --out " + dir_.string()), 0);
  const double raw = eval::ate_rmse(io::load_tum(est.string()), io::load_tum(gt.string()), false);
  EXPECT_EQ(metrics(dir_).at("ate_rmse_m").get<double>(), raw);
}

TEST_F(Cli, EvalMalformedLineIsReported) {
  EXPECT_EQ(run("eval --est " + (kData / "malformed_line7.tum").string() + " --gt " +
                (kData / "ate_fixture_gt.tum").string() + " --out " + dir_.string()),
            2);
  EXPECT_NE(err_.find("line 7"), std::string::npos) << err_;
  EXPECT_NE(err_.find("\"line\":7"), std::string::npos) << err_;
}

TEST_F(Cli, ExportG2oWritesLoadableGraph) {
  const fs::path out = dir_ / "graph.g2o";
  ASSERT_EQ(run("export-g2o --config " + (kConfigs / "single_room.json").string() + " --out " + out.string()), 0)
      << err_;
  const PoseGraph g = load_g2o(out.string());
  EXPECT_GE(g.nodes().size(), 1u);
  EXPECT_TRUE(g.prior());
}

TEST_F(Cli, UsageAndInputErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("run --out x"), 2);
  EXPECT_EQ(run("run --config /nonexistent.json --out x"), 2);
  EXPECT_EQ(run("run --config " + (kConfigs / "single_room.json").string() + " --out x --predictor nope"), 2);
  std::ofstream(dir_ / "bad.json") << "{ not json";
  EXPECT_EQ(run("run --config " + (dir_ / "bad.json").string() + " --out " + (dir_ / "r").string()), 2);
  EXPECT_NE(err_.find("\"kind\":\"input\""), std::string::npos) << err_;
}

}  // namespace
}  // namespace grs
