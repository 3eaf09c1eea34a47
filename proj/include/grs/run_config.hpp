#pragma once

// Run description shared by the command-line tool and the acceptance suite:
// which predictor, which scene, module parameter blocks, evaluation options.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include "grs/errors.hpp"
#include "grs/eval.hpp"
#include "grs/json_util.hpp"
#include "grs/pipeline.hpp"
#include "grs/predictor.hpp"
#include "grs/synth.hpp"

namespace grs {

enum class PredictorKind { toy, oracle };

inline PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "toy") return PredictorKind::toy;
  if (s == "oracle") return PredictorKind::oracle;
  throw InputError("unknown predictor '" + s + "' (expected toy or oracle)");
}

inline const char* to_string(PredictorKind k) { return k == PredictorKind::toy ? "toy" : "oracle"; }

struct RunConfig {
  PredictorKind predictor = PredictorKind::oracle;
  std::uint64_t seed = 0;
  synth::SceneSpec scene;
  synth::NoiseSpec noise;
  PipelineConfig pipeline;
  eval::EvalOptions eval;
  double gt_density = 0.0;  // 0: use the scene's surface density
  predictor::ModelConfig model;
  std::optional<std::size_t> max_frames;
};

/// `scene` may be inline, or `scene_path` / `sequence_dir` relative to
/// `base_dir`.
inline RunConfig run_config_from_json(const json_util::Json& j, const std::filesystem::path& base_dir) {
  using json_util::get_or;
  if (!j.is_object()) throw InputError("run config must be a JSON object");
  RunConfig c;
  c.predictor = predictor_kind_from_string(get_or<std::string>(j, "predictor", "oracle"));
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  if (j.contains("scene")) {
    c.scene = synth::scene_from_json(j.at("scene"));
  } else if (j.contains("scene_path")) {
    c.scene = synth::load_scene(base_dir / get_or<std::string>(j, "scene_path", ""));
  } else if (j.contains("sequence_dir")) {
    c.scene = synth::load_scene(base_dir / get_or<std::string>(j, "sequence_dir", "") / "scene.json");
  } else {
    throw InputError("run config needs one of scene, scene_path, sequence_dir");
  }
  if (j.contains("noise")) c.noise = synth::noise_from_json(j.at("noise"));
  c.pipeline = pipeline_config_from_json(j);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.align = get_or(e, "align", c.eval.align);
    c.eval.voxel = get_or(e, "voxel", c.eval.voxel);
    c.eval.icp.max_iters = get_or(e, "icp_max_iters", c.eval.icp.max_iters);
    c.eval.icp.max_distance = get_or(e, "icp_max_distance", c.eval.icp.max_distance);
    c.gt_density = get_or(e, "gt_density", c.gt_density);
    if (c.eval.voxel < 0.0 || c.gt_density < 0.0) throw InputError("eval: voxel and gt_density must be >= 0");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.patch = get_or(m, "patch", c.model.patch);
    c.model.dim = get_or(m, "dim", c.model.dim);
    c.model.state_tokens = get_or(m, "state_tokens", c.model.state_tokens);
    c.model.heads = get_or(m, "heads", c.model.heads);
    c.model.blocks = get_or(m, "blocks", c.model.blocks);
  }
  if (j.contains("max_frames")) c.max_frames = get_or<std::size_t>(j, "max_frames", 0);
  c.scene.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  json_util::Json j;
  try {
    j = json_util::Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

struct RunOutputs {
  std::shared_ptr<const synth::SyntheticSequence> sequence;
  PipelineResult result;
  PointCloud gt_cloud;
  eval::EvalReport report;
  eval::EvalReport open_loop_report;
  bool alignment_degenerate = false;
};

namespace detail {

inline synth::SyntheticSequence truncated(synth::SyntheticSequence seq, std::size_t n) {
  if (n == 0) throw InputError("max_frames must be positive");
  if (n >= seq.size()) return seq;
  Trajectory gt;
  for (std::size_t i = 0; i < n; ++i) gt.push_back(seq.ground_truth[i].timestamp, seq.ground_truth[i].pose);
  seq.ground_truth = std::move(gt);
  seq.camera_points.resize(n);
  seq.images.resize(n);
  return seq;
}

}  // namespace detail

inline RunOutputs execute_run(const RunConfig& cfg) {
  RunOutputs out;
  auto seq = synth::generate(cfg.scene);
  if (cfg.max_frames) seq = detail::truncated(std::move(seq), *cfg.max_frames);
  out.sequence = std::make_shared<const synth::SyntheticSequence>(std::move(seq));
  const auto& s = *out.sequence;

  std::optional<predictor::GatedRecurrentModel> model;  // outlives the predictor that references it
  std::unique_ptr<SequencePredictor> pred;
  if (cfg.predictor == PredictorKind::oracle) {
    pred = std::make_unique<synth::OraclePredictor>(out.sequence, cfg.noise, cfg.seed);
  } else {
    predictor::ModelConfig m = cfg.model;
    m.height = s.spec.camera.height;
    m.width = s.spec.camera.width;
    m.seed = cfg.seed;
    m.validate();
    std::vector<double> stamps;
    for (const auto& p : s.ground_truth) stamps.push_back(p.timestamp);
    model.emplace(m);
    pred = std::make_unique<predictor::ToyPredictor>(*model, s.images, std::move(stamps));
  }
  out.result = run_pipeline(*pred, cfg.pipeline);
  out.gt_cloud = synth::ground_truth_cloud(s.spec, cfg.gt_density > 0.0 ? cfg.gt_density : s.spec.surface_density);

  auto evaluate = [&](const GlobalMap& m) {
    return eval::evaluate(m.trajectory, s.ground_truth, &m.cloud, &out.gt_cloud, cfg.eval);
  };
  try {
    out.report = evaluate(out.result.map);
    out.open_loop_report = evaluate(out.result.open_loop_map);
  } catch (const DegenerateError&) {
    // An untrained predictor can emit trajectories with no usable alignment.
    out.alignment_degenerate = true;
    eval::EvalOptions raw = cfg.eval;
    raw.align = false;
    out.report = eval::evaluate(out.result.map.trajectory, s.ground_truth, nullptr, nullptr, raw);
    out.open_loop_report = eval::evaluate(out.result.open_loop_map.trajectory, s.ground_truth, nullptr, nullptr, raw);
  }
  return out;
}

inline json_util::Json metrics_json(const RunOutputs& o, PredictorKind kind) {
  json_util::Json j = eval::to_json(o.report);
  j["predictor"] = to_string(kind);
  j["open_loop_ate_m"] = o.open_loop_report.ate_rmse;
  j["open_loop"] = eval::to_json(o.open_loop_report);
  j["alignment_degenerate"] = o.alignment_degenerate;
  j["submaps"] = o.result.submaps.size();
  j["loops"] = o.result.loops.size();
  j["resets"] = o.result.reset_count;
  j["map_points"] = o.result.map.cloud.size();
  return j;
}

}  // namespace grs
