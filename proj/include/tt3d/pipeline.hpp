#pragma once

// End-to-end commands behind the command-line tool. Each returns a process
// exit code: 0 success, 2 unusable input, 3 nothing to report.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tt3d/calib.hpp"
#include "tt3d/io.hpp"
#include "tt3d/physics.hpp"
#include "tt3d/rallyseg.hpp"
#include "tt3d/recon.hpp"
#include "tt3d/svg.hpp"
#include "tt3d/synthbench.hpp"

namespace tt3d {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitEmpty = 3;

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { Quiet, Error, Warn, Info, Debug };

inline LogLevel parse_log_level(std::string_view s) {
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "error") return LogLevel::Error;
  if (s == "warn") return LogLevel::Warn;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  throw Error(Errc::ParseError, "unknown log level '" + std::string(s) + "'");
}

/// Verbosity from TT3D_LOG (quiet, error, warn, info, debug); warn when unset.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("TT3D_LOG");
  if (!v || !*v) return LogLevel::Warn;
  try {
    return parse_log_level(v);
  } catch (const Error&) {
    return LogLevel::Warn;
  }
}

class Logger {
 public:
  explicit Logger(LogLevel level = log_level_from_env(), std::ostream& out = std::cerr) : level_(level), out_(&out) {}

  void error(std::string_view msg) { write(LogLevel::Error, "error", msg); }
  void warn(std::string_view msg) { write(LogLevel::Warn, "warn", msg); }
  void info(std::string_view msg) { write(LogLevel::Info, "info", msg); }
  void debug(std::string_view msg) { write(LogLevel::Debug, "debug", msg); }

  int warnings() const { return warnings_; }

 private:
  void write(LogLevel level, std::string_view tag, std::string_view msg) {
    if (level == LogLevel::Warn) ++warnings_;
    if (level > level_) return;
    *out_ << "[" << tag << "] " << msg << "\n";
  }

  LogLevel level_;
  std::ostream* out_;
  int warnings_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration

/// Ball physics by name: tabletennis, tennis-grass or tennis-clay.
inline PhysParams physics_preset(std::string_view name) {
  if (name == "tabletennis") return PhysParams::table_tennis();
  if (name == "tennis-grass") return PhysParams::tennis(CourtSurface::Grass);
  if (name == "tennis-clay") return PhysParams::tennis(CourtSurface::Clay);
  throw Error(Errc::InvalidArgument, "unknown physics '" + std::string(name) + "'");
}

struct PipelineConfig {
  std::string detections;   // input paths; command-line options take precedence
  std::string keypoints;
  std::string calibration;
  std::string output = "tt3d_out";
  std::string physics = "tabletennis";
  double fps = 25.0;
  bool use_blur = true;
  SegConfig seg;
  EventConfig events;
  CalibConfig calib;
  TrackerConfig tracker;
  ReconOptions recon;
  BenchConfig bench;

  PhysParams params() const { return physics_preset(physics); }

  void validate() const {
    if (!(fps > 0.0)) throw Error(Errc::InvalidArgument, "fps must be positive");
    physics_preset(physics);
    seg.validate();
    calib.validate();
  }
};

inline Json write_json(const PipelineConfig& c) {
  Json j;
  j["detections"] = c.detections;
  j["keypoints"] = c.keypoints;
  j["calibration"] = c.calibration;
  j["output"] = c.output;
  j["physics"] = c.physics;
  j["fps"] = c.fps;
  j["use_blur"] = c.use_blur;
  j["seg"] = write_json(c.seg);
  j["events"] = write_json(c.events);
  j["calib"] = write_json(c.calib);
  j["tracker"] = write_json(c.tracker);
  j["recon"] = write_json(c.recon);
  j["bench"] = write_json(c.bench);
  return j;
}

inline void read_json(const Json& j, PipelineConfig& c) {
  detail::ObjectReader r(j, "config");
  r.optional("detections", c.detections);
  r.optional("keypoints", c.keypoints);
  r.optional("calibration", c.calibration);
  r.optional("output", c.output);
  r.optional("physics", c.physics);
  r.optional("fps", c.fps);
  r.optional("use_blur", c.use_blur);
  r.optional("seg", c.seg);
  r.optional("events", c.events);
  r.optional("calib", c.calib);
  r.optional("tracker", c.tracker);
  r.optional("recon", c.recon);
  r.optional("bench", c.bench);
  r.finish();
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  return from_json_text<PipelineConfig>(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Shared steps

/// Camera for one frame of keypoints. Unlabelled corners are ordered by the
/// lowest-error labelling.
inline CalibratedCamera calibrate_frame(const KeypointFrame& kp, const CalibConfig& cfg,
                                        const TableModel& table = TableModel::standard()) {
  if (!kp.corners) throw Error(Errc::TooFewPoints, "no keypoints");
  if (kp.labelled) return estimate_focal(table_correspondences(table, *kp.corners, kp.midline), kp.image, cfg).camera;
  return disambiguate_corners(*kp.corners, table, kp.image, cfg).estimate.camera;
}

/// Filtered calibration with nearest-frame lookup.
class CalibrationStream {
 public:
  explicit CalibrationStream(std::vector<CalibrationRecord> records) : records_(std::move(records)) {
    if (records_.empty()) throw Error(Errc::EmptyStream, "calibration stream is empty");
    std::stable_sort(records_.begin(), records_.end(),
                     [](const auto& a, const auto& b) { return a.tracked.t < b.tracked.t; });
  }

  double t_begin() const { return records_.front().tracked.t; }
  double t_end() const { return records_.back().tracked.t; }

  const CalibratedCamera& at(double t) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), t,
                               [](const CalibrationRecord& r, double x) { return r.tracked.t < x; });
    if (it == records_.end()) return records_.back().tracked.camera;
    if (it != records_.begin() && t - std::prev(it)->tracked.t <= it->tracked.t - t) --it;
    return it->tracked.camera;
  }

 private:
  std::vector<CalibrationRecord> records_;
};

inline bool has_blur(const RallyTrack& track) {
  return std::any_of(track.begin(), track.end(), [](const Detection& d) { return d.blur_angle.has_value(); });
}

/// Segmentation settings for a track: blur is switched off when disabled or
/// when no detection carries it.
inline SegConfig effective_seg(const PipelineConfig& cfg, const RallyTrack& track, Logger& log) {
  SegConfig seg = cfg.seg;
  if (!cfg.use_blur) {
    seg.blur_weight = 0.0;
  } else if (!has_blur(track)) {
    log.warn("detections carry no blur orientation; segmenting on positions only");
    seg.blur_weight = 0.0;
  }
  return seg;
}

inline RallyTrack load_track(const std::string& path) {
  if (path.empty()) throw Error(Errc::InvalidArgument, "no detections file given");
  auto track = read_records<Detection>(read_file(path));
  std::stable_sort(track.begin(), track.end(), [](const Detection& a, const Detection& b) { return a.t < b.t; });
  return track;
}

inline CalibrationStream load_calibration(const std::string& path) {
  if (path.empty()) throw Error(Errc::InvalidArgument, "no calibration file given");
  auto records = read_records<CalibrationRecord>(read_file(path));
  if (records.empty()) throw Error(Errc::ParseError, "'" + path + "' holds no calibration records");
  return CalibrationStream(std::move(records));
}

inline void check_coverage(const CalibrationStream& calib, const RallyTrack& track, double fps) {
  if (track.empty()) return;
  const double slack = 1.0 / fps;
  if (track.front().t < calib.t_begin() - slack || track.back().t > calib.t_end() + slack) {
    throw Error(Errc::InvalidArgument, "calibration stream does not cover the detection time range");
  }
}

/// Maps library failures to exit codes.
template <class F>
int run_command(Logger& log, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    log.error(e.what());
    switch (e.code()) {
      case Errc::ParseError:
      case Errc::InvalidArgument: return kExitInput;
      default: return kExitEmpty;
    }
  } catch (const std::exception& e) {
    log.error(e.what());
    return 1;
  }
}

// ---------------------------------------------------------------------------
// Commands

/// Per-frame calibration followed by temporal filtering. Frames that fail to
/// calibrate are logged and coasted through.
inline int cmd_calibrate(const PipelineConfig& cfg, const std::string& keypoints_path, const std::string& out_path,
                         Logger& log) {
  return run_command(log, [&] {
    cfg.validate();
    if (keypoints_path.empty()) throw Error(Errc::InvalidArgument, "no keypoints file given");
    const auto frames = read_records<KeypointFrame>(read_file(keypoints_path));
    if (frames.empty()) throw Error(Errc::ParseError, "'" + keypoints_path + "' holds no keypoint frames");
    CameraTracker tracker(cfg.tracker);
    std::vector<CalibrationRecord> out;
    int calibrated = 0;
    for (const auto& fr : frames) {
      std::optional<CalibratedCamera> cam;
      try {
        cam = calibrate_frame(fr, cfg.calib);
        ++calibrated;
      } catch (const Error& e) {
        log.warn("frame " + std::to_string(fr.frame) + ": " + e.what());
      }
      if (!tracker.initialized() && !cam) continue;
      out.push_back({fr.frame, tracker.update(fr.t, cam)});
    }
    if (calibrated == 0) throw Error(Errc::EmptyStream, "no frame could be calibrated");
    write_file(out_path, write_records(out));
    log.info("calibrated " + std::to_string(calibrated) + " of " + std::to_string(frames.size()) + " frames");
    return kExitOk;
  });
}

// Classification needs the camera at each event, so it runs one event at a time.
inline std::vector<Event> detect_events(const RallyTrack& track, const std::vector<Segment>& segs,
                                        const CalibrationStream& calib, const PipelineConfig& cfg) {
  const auto locs = locate_events(segs, frame_interval(track), cfg.events);
  std::vector<Event> events;
  for (std::size_t k = 0; k < locs.size(); ++k) {
    if (!locs[k]) continue;
    const std::vector<Segment> pair{segs[k], segs[k + 1]};
    for (auto e : classify_events(pair, {locs[k]}, calib.at(locs[k]->t_star), TableModel::standard(),
                                  cfg.params().r)) {
      e.left_segment = k;
      e.right_segment = k + 1;
      events.push_back(e);
    }
  }
  return events;
}

/// Segments the track; with a calibration stream the events are located and
/// classified as well.
inline int cmd_segment(const PipelineConfig& cfg, const std::string& detections_path,
                       const std::string& calibration_path, const std::string& segments_out,
                       const std::string& events_out, Logger& log) {
  return run_command(log, [&] {
    cfg.validate();
    const auto track = load_track(detections_path);
    const auto segs = segment_rally(track, effective_seg(cfg, track, log));
    write_file(segments_out, write_records(segs));
    log.info(std::to_string(segs.size()) + " segments");
    if (calibration_path.empty() || events_out.empty()) return kExitOk;
    const auto calib = load_calibration(calibration_path);
    check_coverage(calib, track, cfg.fps);
    const auto events = detect_events(track, segs, calib, cfg);
    write_file(events_out, write_records(events));
    return kExitOk;
  });
}

/// Full pipeline for one rally: results.jsonl, one trajectory CSV per
/// reconstructed bounce and, on request, top-down and side SVG plots.
inline int cmd_reconstruct(const PipelineConfig& cfg, const std::string& detections_path,
                           const std::string& calibration_path, const std::string& out_dir, bool svg, Logger& log) {
  return run_command(log, [&] {
    cfg.validate();
    const auto track = load_track(detections_path);
    const auto calib = load_calibration(calibration_path);
    const PhysParams params = cfg.params();
    const auto segs = segment_rally(track, effective_seg(cfg, track, log));
    check_coverage(calib, track, cfg.fps);
    const auto events = detect_events(track, segs, calib, cfg);
    const bool any_bounce = std::any_of(events.begin(), events.end(),
                                        [](const Event& e) { return e.kind == EventKind::TableBounce; });
    if (!any_bounce) throw Error(Errc::NoIntersectionInWindow, "no table bounce found in the track");
    const CameraAt camera_at = [&](double t) { return calib.at(t); };
    const auto recs = reconstruct_rally(track, segs, events, camera_at, params, cfg.recon);

    const std::filesystem::path dir(out_dir);
    write_file(dir / "results.jsonl", write_records(recs));
    std::vector<PlotSeries> series;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      if (!recs[k].result) {
        log.warn("bounce at t = " + format_number(recs[k].event.t_star) + " s: " + recs[k].message);
        continue;
      }
      const auto& traj = recs[k].result->trajectory;
      write_file(dir / ("trajectory_" + std::to_string(k) + ".csv"), write_trajectory_csv(traj));
      PlotSeries s;
      s.label = "bounce " + std::to_string(k) + " at t = " + format_number(recs[k].event.t_star) + " s";
      for (const auto& st : traj) s.points.push_back(st.p);
      series.push_back(std::move(s));
    }
    if (svg) {
      write_file(dir / "top.svg", render_svg(series, PlotView::TopDown));
      write_file(dir / "side.svg", render_svg(series, PlotView::Side));
    }
    log.info(std::to_string(series.size()) + " of " + std::to_string(recs.size()) + " bounces reconstructed");
    return kExitOk;
  });
}

/// Runs the synthetic benchmark and writes report.txt, summary.csv and
/// records.csv. The summary table is also printed to `out`.
inline int cmd_bench(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& out, Logger& log) {
  return run_command(log, [&] {
    cfg.bench.validate();
    const auto start = std::chrono::steady_clock::now();
    const EvalReport report = run_benchmark(cfg.bench);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::filesystem::path dir(out_dir);
    const std::string text = format_report(report);
    write_file(dir / "report.txt", text);
    write_file(dir / "summary.csv", write_summary_csv(report));
    write_file(dir / "records.csv", write_records_csv(report));
    out << text;
    log.info("benchmark took " + format_number(std::round(secs * 10.0) / 10.0) + " s");
    return kExitOk;
  });
}

/// Draws trajectory CSVs into one SVG.
inline int cmd_plot(const std::vector<std::string>& trajectory_paths, PlotView view, const std::string& out_path,
                    Logger& log) {
  return run_command(log, [&] {
    if (trajectory_paths.empty()) throw Error(Errc::InvalidArgument, "no trajectory files given");
    std::vector<PlotSeries> series;
    for (const auto& path : trajectory_paths) {
      PlotSeries s;
      s.label = std::filesystem::path(path).filename().string();
      for (const auto& st : read_trajectory_csv(read_file(path))) s.points.push_back(st.p);
      series.push_back(std::move(s));
    }
    write_file(out_path, render_svg(series, view));
    return kExitOk;
  });
}

struct SynthOptions {
  std::uint64_t seed = 1;
  ViewName view = ViewName::Side;
  int shots = 3;
  bool noisy = true;
};

/// Synthetic rally seen from a preset view: detections.jsonl, keypoints.jsonl
/// (labelled corners and midline for every frame with a detection) and the
/// ground truth in truth.csv.
inline int cmd_synth(const PipelineConfig& cfg, const SynthOptions& so, const std::string& out_dir, Logger& log) {
  return run_command(log, [&] {
    cfg.validate();
    const PhysParams params = cfg.params();
    std::mt19937_64 rng(so.seed);
    const auto gt = random_rally(rng, so.shots, params, cfg.bench.envelope);
    const ViewPreset view = make_view(so.view, cfg.bench.focal, cfg.bench.image);
    const NoiseModel noise = so.noisy ? NoiseModel::standard(so.seed) : NoiseModel::none(so.seed);
    RenderOptions ro;
    ro.fps = cfg.fps;
    auto track = render_track(gt, view, noise, ro);
    if (!cfg.use_blur) {
      for (auto& d : track) {
        d.blur_angle.reset();
        d.blur_length.reset();
      }
    }
    std::vector<KeypointFrame> kps;
    for (const auto& d : track) {
      const auto corrs = render_keypoints(view, noise.sigma_p, rng);
      KeypointFrame kp;
      kp.frame = d.frame;
      kp.t = d.t;
      kp.image = view.size;
      kp.labelled = true;
      kp.corners = std::array<Vec2, 4>{corrs[0].image, corrs[1].image, corrs[2].image, corrs[3].image};
      kp.midline = std::array<Vec2, 2>{corrs[4].image, corrs[5].image};
      kps.push_back(kp);
    }
    const std::filesystem::path dir(out_dir);
    write_file(dir / "detections.jsonl", write_records(track));
    write_file(dir / "keypoints.jsonl", write_records(kps));
    write_file(dir / "truth.csv", write_trajectory_csv(gt.samples));
    log.info(std::to_string(track.size()) + " detections, " + std::to_string(gt.bounces().size()) + " bounces");
    return kExitOk;
  });
}

}  // namespace tt3d
