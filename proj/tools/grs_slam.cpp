// grs_slam: generate synthetic sequences, run the mapping pipeline, evaluate
// trajectories, export pose graphs.
//
// Exit codes: 0 ok, 2 input error, 3 pipeline error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "grs/errors.hpp"
#include "grs/eval.hpp"
#include "grs/io.hpp"
#include "grs/parallel.hpp"
#include "grs/pipeline.hpp"
#include "grs/plot.hpp"
#include "grs/posegraph.hpp"
#include "grs/run_config.hpp"
#include "grs/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kPipelineError = 3;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> predictor;
  // eval
  std::string est, gt, est_map, gt_map;
  bool no_align = false;
  double voxel = 0.0;
  // export-g2o
  bool open_loop = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw grs::InputError("cannot write " + path.string());
  os << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw grs::InputError("cannot create directory " + dir.string() + ": " + ec.message());
}

grs::RunConfig load_config(const Options& o) {
  grs::RunConfig cfg = grs::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.predictor) cfg.predictor = grs::predictor_kind_from_string(*o.predictor);
  return cfg;
}

int cmd_generate(const Options& o) {
  std::ifstream is(o.config);
  if (!is) throw grs::InputError("cannot open " + o.config);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw grs::InputError(o.config + ": " + e.what());
  }
  // Either a bare scene spec or a run config with an inline scene.
  grs::synth::SceneSpec spec = grs::synth::scene_from_json(j.contains("scene") ? j.at("scene") : j);
  if (o.seed) spec.seed = *o.seed;
  const auto seq = grs::synth::generate(spec);
  grs::synth::write_sequence(o.out, seq);
  std::cout << "wrote " << seq.size() << " frames to " << o.out << "\n";
  return kOk;
}

int cmd_run(const Options& o) {
  const grs::RunConfig cfg = load_config(o);
  const fs::path out(o.out);
  ensure_dir(out);
  const grs::RunOutputs r = grs::execute_run(cfg);
  grs::io::save_tum((out / "est_traj.tum").string(), r.result.map.trajectory);
  grs::io::save_ply((out / "map.ply").string(), r.result.map.cloud);
  write_text(out / "submaps.json", grs::submaps_to_json(r.result).dump(2) + "\n");
  grs::save_g2o((out / "posegraph.g2o").string(), r.result.graph);
  write_text(out / "metrics.json", grs::metrics_json(r, cfg.predictor).dump(2) + "\n");
  {
    std::ofstream log(out / "decisions.jsonl");
    for (const auto& d : r.result.log) log << grs::to_json_line(d) << '\n';
  }
  std::cout << "ATE " << r.report.ate_rmse << " m (open loop " << r.open_loop_report.ate_rmse << " m), "
            << r.result.submaps.size() << " submaps, " << r.result.loops.size() << " loops\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const grs::Trajectory est = grs::io::load_tum(o.est);
  const grs::Trajectory gt = grs::io::load_tum(o.gt);
  grs::eval::EvalOptions opt;
  opt.align = !o.no_align;
  opt.voxel = o.voxel;
  std::optional<grs::PointCloud> est_map, gt_map;
  if (!o.est_map.empty() != !o.gt_map.empty()) throw grs::InputError("--est-map and --gt-map go together");
  if (!o.est_map.empty()) {
    est_map = grs::io::load_ply(o.est_map);
    gt_map = grs::io::load_ply(o.gt_map);
  }
  const auto report = grs::eval::evaluate(est, gt, est_map ? &*est_map : nullptr, gt_map ? &*gt_map : nullptr, opt);
  const auto a = grs::eval::ate(est, gt, opt.align);
  const fs::path out(o.out);
  ensure_dir(out);
  write_text(out / "metrics.json", grs::eval::to_json(report).dump(2) + "\n");
  write_text(out / "trajectory.svg", grs::trajectory_svg(a.gt_positions, a.est_positions, a.residuals));
  std::cout << "ATE " << report.ate_rmse << " m over " << report.frames << " poses\n";
  return kOk;
}

int cmd_export_g2o(const Options& o) {
  const grs::RunConfig cfg = load_config(o);
  const grs::RunOutputs r = grs::execute_run(cfg);
  const fs::path out(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  grs::save_g2o(out.string(), o.open_loop ? r.result.open_loop : r.result.graph);
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

int report_error(const std::string& out_dir, int code, const std::string& kind, const std::string& message,
                 std::optional<std::size_t> line = std::nullopt) {
  json j{{"error", message}, {"kind", kind}, {"exit_code", code}};
  if (line) j["line"] = *line;
  std::cerr << j.dump() << "\n";
  if (!out_dir.empty() && fs::is_directory(out_dir)) {
    std::ofstream(fs::path(out_dir) / "error.json") << j.dump(2) << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated recurrent submap SLAM on synthetic scenes"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON config");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output path")->required();
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--threads", o.threads, "cap worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--predictor", o.predictor, "toy or oracle")->check(CLI::IsMember({"toy", "oracle"}));
  };

  auto* gen = app.add_subcommand("generate", "render a synthetic sequence to a directory");
  add_common(gen, true);
  auto* run = app.add_subcommand("run", "run the full pipeline and write all artifacts");
  add_common(run, true);
  auto* ev = app.add_subcommand("eval", "evaluate an estimated TUM trajectory against ground truth");
  add_common(ev, false);
  ev->add_option("--est", o.est, "estimated trajectory (TUM)")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", o.gt, "ground-truth trajectory (TUM)")->required()->check(CLI::ExistingFile);
  ev->add_option("--est-map", o.est_map, "estimated cloud (PLY)")->check(CLI::ExistingFile);
  ev->add_option("--gt-map", o.gt_map, "ground-truth cloud (PLY)")->check(CLI::ExistingFile);
  ev->add_flag("--no-align", o.no_align, "skip the similarity alignment");
  ev->add_option("--voxel", o.voxel, "voxel size for cloud metrics (m)")->check(CLI::NonNegativeNumber);
  auto* ex = app.add_subcommand("export-g2o", "run the pipeline and write only the pose graph");
  add_common(ex, true);
  ex->add_flag("--open-loop", o.open_loop, "export the graph without loop closures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }
  if (o.threads) grs::set_max_threads(*o.threads);

  const bool is_run = run->parsed() || ex->parsed();
  try {
    if (gen->parsed()) return cmd_generate(o);
    if (run->parsed()) return cmd_run(o);
    if (ev->parsed()) return cmd_eval(o);
    if (ex->parsed()) return cmd_export_g2o(o);
  } catch (const grs::ParseError& e) {
    return report_error(run->parsed() ? o.out : "", kInputError, "parse", e.what(), e.line());
  } catch (const grs::InputError& e) {
    return report_error(run->parsed() ? o.out : "", kInputError, "input", e.what());
  } catch (const std::exception& e) {
    std::error_code ec;
    if (run->parsed()) fs::create_directories(o.out, ec);
    return report_error(run->parsed() ? o.out : "", is_run ? kPipelineError : kInputError,
                        is_run ? "pipeline" : "input", e.what());
  }
  return kOk;
}
