// Command-line front end: calibrate, segment, reconstruct, bench, plot, synth.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tt3d/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string physics;
  bool no_blur = false;
  std::optional<int> jobs;
};

tt3d::PipelineConfig resolve_config(const GlobalOptions& g) {
  tt3d::PipelineConfig cfg = g.config.empty() ? tt3d::PipelineConfig{} : tt3d::load_config(g.config);
  if (!g.physics.empty()) {
    cfg.physics = g.physics;
    cfg.bench.params = tt3d::physics_preset(g.physics);
  }
  if (g.no_blur) {
    cfg.use_blur = false;
    cfg.bench.use_blur = false;
  }
  if (g.seed) cfg.bench.seed = *g.seed;
  if (g.jobs) cfg.bench.jobs = *g.jobs;
  return cfg;
}

std::string pick(const std::string& flag, const std::string& from_config) { return flag.empty() ? from_config : flag; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular 3D reconstruction of table tennis ball trajectories"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Pipeline configuration (JSON)");
  app.add_option("--seed", g.seed, "Random seed for synth and bench");
  app.add_option("--physics", g.physics, "Ball physics")->check(CLI::IsMember({"tabletennis", "tennis-grass", "tennis-clay"}));
  app.add_flag("--no-blur", g.no_blur, "Ignore motion-blur orientation");
  app.add_option("--jobs", g.jobs, "Benchmark worker threads (0: all cores)")->check(CLI::NonNegativeNumber);

  std::string keypoints, detections, calibration, out, out_dir, segments_out, events_out;
  bool svg = false;

  auto* calibrate = app.add_subcommand("calibrate", "Per-frame camera calibration from table keypoints");
  calibrate->add_option("--keypoints", keypoints, "Keypoint records (JSONL)");
  calibrate->add_option("--out", out, "Calibration stream to write (JSONL)")->required();

  auto* segment = app.add_subcommand("segment", "Split a detection track into arcs between contacts");
  segment->add_option("--detections", detections, "Detection records (JSONL)");
  segment->add_option("--calibration", calibration, "Calibration stream; enables event classification");
  segment->add_option("--segments", segments_out, "Segments to write (JSONL)")->required();
  segment->add_option("--events", events_out, "Events to write (JSONL)");

  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct 3D flight around every table bounce");
  reconstruct->add_option("--detections", detections, "Detection records (JSONL)");
  reconstruct->add_option("--calibration", calibration, "Calibration stream (JSONL)");
  reconstruct->add_option("--out-dir", out_dir, "Directory for results and trajectories");
  reconstruct->add_flag("--svg", svg, "Also write top-down and side-view plots");

  auto* bench = app.add_subcommand("bench", "Synthetic reconstruction benchmark");
  bench->add_option("--out-dir", out_dir, "Directory for the report files");
  int n_trajectories = 0;
  bench->add_option("--n", n_trajectories, "Trajectories per view (overrides the config)")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "Draw trajectory CSVs as SVG");
  std::vector<std::string> trajectories;
  std::string view_name = "top";
  plot->add_option("trajectories", trajectories, "Trajectory CSV files")->required();
  plot->add_option("--view", view_name, "top or side")->check(CLI::IsMember({"top", "side"}));
  plot->add_option("--out", out, "SVG file to write")->required();

  auto* synth = app.add_subcommand("synth", "Render a synthetic rally to detection and keypoint files");
  tt3d::SynthOptions so;
  std::string synth_view = "side";
  bool clean = false;
  synth->add_option("--out-dir", out_dir, "Directory for the generated files");
  synth->add_option("--view", synth_view, "side, oblique or back")->check(CLI::IsMember({"side", "oblique", "back"}));
  synth->add_option("--shots", so.shots, "Shots in the rally")->check(CLI::PositiveNumber);
  synth->add_flag("--clean", clean, "No detection noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return tt3d::kExitInput;
  }

  tt3d::Logger log;
  tt3d::PipelineConfig cfg;
  try {
    cfg = resolve_config(g);
  } catch (const tt3d::Error& e) {
    log.error(e.what());
    return tt3d::kExitInput;
  }

  if (*calibrate) return tt3d::cmd_calibrate(cfg, pick(keypoints, cfg.keypoints), out, log);
  if (*segment) {
    return tt3d::cmd_segment(cfg, pick(detections, cfg.detections), pick(calibration, cfg.calibration), segments_out,
                             events_out, log);
  }
  if (*reconstruct) {
    return tt3d::cmd_reconstruct(cfg, pick(detections, cfg.detections), pick(calibration, cfg.calibration),
                                 pick(out_dir, cfg.output), svg, log);
  }
  if (*bench) {
    if (n_trajectories > 0) cfg.bench.n_trajectories = n_trajectories;
    return tt3d::cmd_bench(cfg, pick(out_dir, cfg.output), std::cout, log);
  }
  if (*plot) return tt3d::cmd_plot(trajectories, tt3d::parse_plot_view(view_name), out, log);
  if (*synth) {
    so.view = tt3d::parse_view(synth_view);
    so.noisy = !clean;
    if (g.seed) so.seed = *g.seed;
    return tt3d::cmd_synth(cfg, so, pick(out_dir, cfg.output), log);
  }
  return tt3d::kExitInput;
}
