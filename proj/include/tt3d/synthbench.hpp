#pragma once

// Synthetic rallies, 25 fps rendering from fixed viewpoints, and the
// benchmark that runs the full pipeline against known ground truth.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "tt3d/calib.hpp"
#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"
#include "tt3d/physics.hpp"
#include "tt3d/rallyseg.hpp"
#include "tt3d/recon.hpp"

namespace tt3d {

struct NoiseModel {
  double sigma_p = 0.0;      // px, isotropic position noise
  double sigma_theta = 0.0;  // rad, blur-angle noise
  double sigma_l = 0.0;      // px, blur-length noise
  double drop_rate = 0.0;    // probability of losing a detection
  std::uint64_t seed = 0;

  static NoiseModel none(std::uint64_t seed = 0) { return NoiseModel{0.0, 0.0, 0.0, 0.0, seed}; }
  static NoiseModel standard(std::uint64_t seed = 0) { return NoiseModel{2.0, 6.0 * M_PI / 180.0, 1.0, 0.0, seed}; }

  bool noisy() const { return sigma_p > 0.0 || sigma_theta > 0.0 || sigma_l > 0.0 || drop_rate > 0.0; }

  void validate() const {
    if (!(sigma_p >= 0.0 && sigma_theta >= 0.0 && sigma_l >= 0.0)) {
      throw Error(Errc::InvalidArgument, "noise standard deviations must be non-negative");
    }
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw Error(Errc::InvalidArgument, "drop_rate must lie in [0, 1)");
  }
};

enum class ViewName { Side, Oblique, Back };

inline std::string_view to_string(ViewName v) {
  switch (v) {
    case ViewName::Side: return "side";
    case ViewName::Oblique: return "oblique";
    case ViewName::Back: return "back";
  }
  return "?";
}

inline ViewName parse_view(std::string_view s) {
  if (s == "side") return ViewName::Side;
  if (s == "oblique") return ViewName::Oblique;
  if (s == "back") return ViewName::Back;
  throw Error(Errc::ParseError, "unknown view '" + std::string(s) + "'");
}

struct ViewPreset {
  ViewName name = ViewName::Side;
  Pose pose;
  double f = 1800.0;
  ImageSize size{1280, 720};

  CalibratedCamera camera() const {
    CalibratedCamera cam;
    cam.intrinsics = Intrinsics::centered(f, size);
    cam.pose = pose;
    return cam;
  }
};

/// Fixed viewpoints aimed at the table centre, all 6 m away and 2.2 m high.
/// Side looks across the table, Back along it from behind one end, Oblique
/// from 45 degrees between them.
inline ViewPreset make_view(ViewName name, double f = 1800.0, ImageSize size = {1280, 720}) {
  ViewPreset v;
  v.name = name;
  v.f = f;
  v.size = size;
  Vec3 eye;
  switch (name) {
    case ViewName::Side: eye = Vec3(6.0, 0.0, 2.2); break;
    case ViewName::Oblique: eye = Vec3(4.24, -4.24, 2.2); break;
    case ViewName::Back: eye = Vec3(0.3, -6.0, 2.2); break;
  }
  v.pose = look_at(eye, Vec3::Zero());
  return v;
}

// ---------------------------------------------------------------------------
// Ground truth

struct Strike {
  double t = 0.0;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
};

struct RallySpec {
  BallState initial;
  std::vector<Strike> strikes;  // sorted by time
  double t_end = 1.0;
};

struct TruthEvent {
  EventKind kind = EventKind::TableBounce;
  double t = 0.0;
  BallState before;  // state just before the event
  BallState after;
};

struct GenerateOptions {
  double dt = 1.0 / 2000.0;       // integrator step
  double sample_hz = 200.0;       // dense ground-truth rate
  double volume_margin = 3.0;     // m beyond the table edges
  double max_height = 5.0;        // m above the surface
  bool truncate_on_exit = false;  // end the rally where the ball leaves, instead of failing
  TableModel table = TableModel::standard();
};

struct GroundTruthRally {
  PhysParams params;
  GenerateOptions options;
  std::vector<BallState> pieces;  // free-flight starting states: initial, then after every event
  std::vector<TruthEvent> events;
  std::vector<BallState> samples;  // dense, at options.sample_hz
  double t_start = 0.0;
  double t_end = 0.0;

  /// Exact state at time t, integrated from the start of the enclosing flight piece.
  BallState state_at(double t) const {
    std::size_t k = 0;
    while (k < events.size() && events[k].t <= t) ++k;
    FlightOptions free;
    free.check_crossing = false;
    return propagate(pieces[k], t, options.dt, params, free);
  }

  std::vector<TruthEvent> bounces() const {
    std::vector<TruthEvent> out;
    for (const auto& e : events) {
      if (e.kind == EventKind::TableBounce) out.push_back(e);
    }
    return out;
  }
};

namespace detail {

inline bool inside_volume(const Vec3& p, const GenerateOptions& o, const PhysParams& params) {
  return o.table.contains_xy(p, o.volume_margin) && p.z() > -o.table.height + params.r && p.z() < o.max_height;
}

// Time within (a.t, a.t + h] at which the ball centre reaches the radius plane.
inline BallState bisect_contact(const BallState& a, double h, const PhysParams& params) {
  double lo = 0.0, hi = h;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const BallState s = rk4_step(a, mid, params);
    if (s.p.z() - params.r > 0.0) lo = mid;
    else hi = mid;
  }
  BallState s = rk4_step(a, 0.5 * (lo + hi), params);
  s.p.z() = params.r;
  return s;
}

}  // namespace detail

/// Integrates a scripted rally: free flight, table bounces at exact contact
/// times, and instantaneous racket strikes at the scripted times.
inline GroundTruthRally generate_rally(const RallySpec& spec, const PhysParams& params,
                                       const GenerateOptions& options = {}) {
  params.validate();
  if (!(spec.t_end > spec.initial.t)) throw Error(Errc::InvalidArgument, "rally must end after it starts");
  GroundTruthRally gt;
  gt.params = params;
  gt.options = options;
  gt.t_start = spec.initial.t;
  gt.t_end = spec.t_end;
  gt.pieces.push_back(spec.initial);

  BallState s = spec.initial;
  std::size_t next_strike = 0;
  const double h = options.dt;
  while (s.t < spec.t_end - 1e-12) {
    double step = std::min(h, spec.t_end - s.t);
    const bool strike_due = next_strike < spec.strikes.size() && spec.strikes[next_strike].t <= s.t + step + 1e-12;
    if (strike_due) step = std::max(0.0, spec.strikes[next_strike].t - s.t);
    BallState n = step > 0.0 ? rk4_step(s, step, params) : s;
    const bool crossing = s.p.z() - params.r > 1e-12 && n.p.z() - params.r <= 0.0;
    if (crossing) {
      const BallState c = detail::bisect_contact(s, step, params);
      if (options.table.contains_xy(c.p)) {
        const auto b = apply_bounce(c.v, c.w, params);
        TruthEvent ev{EventKind::TableBounce, c.t, c, c};
        ev.after.v = b.v_plus;
        ev.after.w = b.w_plus;
        gt.events.push_back(ev);
        gt.pieces.push_back(ev.after);
        s = ev.after;
        continue;
      }
    }
    if (!detail::inside_volume(n.p, options, params)) {
      if (options.truncate_on_exit) {
        gt.t_end = s.t;
        break;
      }
      throw Error(Errc::BallLeftPlayVolume, "ball left the play volume at t=" + std::to_string(n.t));
    }
    s = n;
    if (strike_due) {
      s.t = spec.strikes[next_strike].t;
      TruthEvent ev{EventKind::RacketStrike, s.t, s, s};
      ev.after.v = spec.strikes[next_strike].v;
      ev.after.w = spec.strikes[next_strike].w;
      gt.events.push_back(ev);
      gt.pieces.push_back(ev.after);
      s = ev.after;
      ++next_strike;
    }
  }

  FlightOptions free;
  free.check_crossing = false;
  const double sh = 1.0 / options.sample_hz;
  std::size_t piece = 0;
  for (long k = 0;; ++k) {
    const double t = gt.t_start + static_cast<double>(k) * sh;
    if (t > gt.t_end + 1e-12) break;
    while (piece < gt.events.size() && gt.events[piece].t <= t) ++piece;
    gt.samples.push_back(propagate(gt.pieces[piece], t, options.dt, params, free));
  }
  return gt;
}

struct ShotEnvelope {
  double speed_min = 4.0, speed_max = 12.0;               // m/s
  double elevation_min_deg = -5.0, elevation_max_deg = 15.0;
  double spin_max = 150.0;                                // rad/s
  double post_bounce_min = 0.25, post_bounce_max = 0.45;  // s until the receiver strikes
  double net_height = 0.1525;
  double min_strike_height = 0.1;    // m above the surface when the receiver plays it
  double max_strike_distance = 2.0;  // m behind the table end
  int max_tries = 5000;
};

namespace detail {

// Flight of one candidate shot; accepts only if it clears the net and lands
// once on the far half before the receiver plays it.
inline std::optional<GroundTruthRally> try_shot(const BallState& launch, double dir, double post, const PhysParams& params,
                                                const ShotEnvelope& env, const GenerateOptions& gopts) {
  RallySpec spec;
  spec.initial = launch;
  spec.t_end = launch.t + 1.5;
  GenerateOptions probe = gopts;
  probe.truncate_on_exit = true;
  const GroundTruthRally flight = generate_rally(spec, params, probe);
  if (flight.events.empty()) return std::nullopt;
  const TruthEvent first = flight.events.front();
  if (first.kind != EventKind::TableBounce) return std::nullopt;
  const double yb = dir * first.before.p.y();
  if (!(yb > 0.1 && yb < 0.5 * gopts.table.length - 0.05 && std::abs(first.before.p.x()) < 0.5 * gopts.table.width - 0.05)) {
    return std::nullopt;
  }
  // clears the net: centre height where the ball passes y = 0
  FlightOptions free;
  free.check_crossing = false;
  double lo = launch.t, hi = first.t;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double y = dir * propagate(launch, mid, gopts.dt * 4, params, free).p.y();
    if (y < 0.0) lo = mid;
    else hi = mid;
  }
  if (propagate(launch, lo, gopts.dt * 4, params, free).p.z() < env.net_height + params.r + 0.01) return std::nullopt;

  // one bounce only inside the kept window, and the ball stays in the volume
  spec.t_end = first.t + post;
  GroundTruthRally gt;
  try {
    gt = generate_rally(spec, params, gopts);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (gt.events.size() != 1) return std::nullopt;
  // the receiver plays the ball above table height and not too far behind the end
  const Vec3 end = gt.state_at(gt.t_end).p;
  if (end.z() < env.min_strike_height || std::abs(end.y()) > 0.5 * gopts.table.length + env.max_strike_distance) {
    return std::nullopt;
  }
  return gt;
}

inline Vec3 random_spin(std::mt19937_64& rng, double dir, double spin_max) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double mag = spin_max * U(rng);
  const double beta = (U(rng) - 0.5) * 0.5 * M_PI;            // mix towards sidespin
  const double top = U(rng) < 0.5 ? 1.0 : -1.0;               // topspin or backspin
  const Vec3 horizontal(-dir * top, 0.0, 0.0);
  return mag * (std::cos(beta) * horizontal + std::sin(beta) * Vec3::UnitZ());
}

}  // namespace detail

/// One shot from behind one end of the table towards the other half: launch,
/// one table bounce, and free flight until the receiver would play the ball.
inline GroundTruthRally random_shot(std::mt19937_64& rng, const PhysParams& params, const ShotEnvelope& env = {},
                                    const GenerateOptions& gopts = {}) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto& table = gopts.table;
  for (int attempt = 0; attempt < env.max_tries; ++attempt) {
    const double dir = U(rng) < 0.5 ? 1.0 : -1.0;
    BallState launch;
    launch.t = 0.0;
    launch.p = Vec3((U(rng) - 0.5) * 1.2, -dir * (0.5 * table.length + 0.2 + 0.6 * U(rng)), 0.05 + 0.4 * U(rng));
    const Vec3 target((U(rng) - 0.5) * 1.2, dir * (0.3 + 0.9 * U(rng)), 0.0);
    const double speed = env.speed_min + (env.speed_max - env.speed_min) * U(rng);
    const double elev =
        (env.elevation_min_deg + (env.elevation_max_deg - env.elevation_min_deg) * U(rng)) * M_PI / 180.0;
    Vec3 heading = target - launch.p;
    heading.z() = 0.0;
    heading.normalize();
    launch.v = speed * (std::cos(elev) * heading + std::sin(elev) * Vec3::UnitZ());
    launch.w = detail::random_spin(rng, dir, env.spin_max);
    const double post = env.post_bounce_min + (env.post_bounce_max - env.post_bounce_min) * U(rng);
    if (auto gt = detail::try_shot(launch, dir, post, params, env, gopts)) return *gt;
  }
  throw Error(Errc::BallLeftPlayVolume, "no shot inside the envelope landed on the table");
}

/// Several consecutive shots, alternating direction; each strike happens where
/// the previous shot's ball is when the receiver plays it.
inline GroundTruthRally random_rally(std::mt19937_64& rng, int n_shots, const PhysParams& params,
                                     const ShotEnvelope& env = {}, const GenerateOptions& gopts = {}) {
  if (n_shots < 1) throw Error(Errc::InvalidArgument, "a rally needs at least one shot");
  GroundTruthRally first = random_shot(rng, params, env, gopts);
  RallySpec spec;
  spec.initial = first.pieces.front();
  spec.t_end = first.t_end;
  double dir = first.pieces.front().v.y() > 0.0 ? 1.0 : -1.0;
  BallState at_strike = first.state_at(first.t_end);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int shot = 1; shot < n_shots; ++shot) {
    dir = -dir;
    bool placed = false;
    for (int attempt = 0; attempt < env.max_tries && !placed; ++attempt) {
      BallState launch = at_strike;
      const Vec3 target((U(rng) - 0.5) * 1.2, dir * (0.3 + 0.9 * U(rng)), 0.0);
      const double speed = env.speed_min + (env.speed_max - env.speed_min) * U(rng);
      const double elev =
          (env.elevation_min_deg + (env.elevation_max_deg - env.elevation_min_deg) * U(rng)) * M_PI / 180.0;
      Vec3 heading = target - launch.p;
      heading.z() = 0.0;
      heading.normalize();
      launch.v = speed * (std::cos(elev) * heading + std::sin(elev) * Vec3::UnitZ());
      launch.w = detail::random_spin(rng, dir, env.spin_max);
      const double post = env.post_bounce_min + (env.post_bounce_max - env.post_bounce_min) * U(rng);
      if (launch.p.z() < params.r + 0.02) continue;
      if (auto gt = detail::try_shot(launch, dir, post, params, env, gopts)) {
        spec.strikes.push_back(Strike{launch.t, launch.v, launch.w});
        spec.t_end = gt->t_end;
        at_strike = gt->state_at(gt->t_end);
        placed = true;
      }
    }
    if (!placed) throw Error(Errc::BallLeftPlayVolume, "could not place shot " + std::to_string(shot));
  }
  return generate_rally(spec, params, gopts);
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderOptions {
  double fps = 25.0;
  double exposure = 1.0 / 100.0;  // s, sets the blur streak length
  bool random_phase = true;
};

/// Samples the ground truth at the frame rate, projects to pixels with blur
/// orientation and length from the image-plane velocity, adds noise, and drops
/// samples that fall outside the image.
inline RallyTrack render_track(const GroundTruthRally& gt, const ViewPreset& view, const NoiseModel& noise,
                               const RenderOptions& ro = {}) {
  noise.validate();
  if (!(ro.fps > 0.0)) throw Error(Errc::InvalidArgument, "fps must be positive");
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double frame_dt = 1.0 / ro.fps;
  const double phase = ro.random_phase ? frame_dt * U(rng) : 0.0;
  const CalibratedCamera cam = view.camera();
  RallyTrack track;
  for (int k = 0;; ++k) {
    const double t = gt.t_start + phase + k * frame_dt;
    if (t > gt.t_end) break;
    // noise is drawn for every frame so the stream does not depend on visibility
    const double nu = N(rng), nv = N(rng), na = N(rng), nl = N(rng), drop = U(rng);
    const BallState s = gt.state_at(t);
    const Vec3 pc = cam.pose.to_camera(s.p);
    if (pc.z() <= 0.1) continue;
    const Vec2 px = project(cam, s.p);
    if (!view.size.contains(px)) continue;
    if (drop < noise.drop_rate) continue;
    const Vec2 ahead = project(cam, s.p + 1e-3 * s.v);
    const Vec2 vel = (ahead - px) / 1e-3;
    Detection d;
    d.frame = k;
    d.t = t;
    d.u = px.x() + noise.sigma_p * nu;
    d.v = px.y() + noise.sigma_p * nv;
    double angle = std::atan2(vel.y(), vel.x()) + noise.sigma_theta * na;
    angle = std::remainder(angle, M_PI);  // orientation only, in [-pi/2, pi/2]
    d.blur_angle = angle;
    d.blur_length = std::max(0.0, vel.norm() * ro.exposure + noise.sigma_l * nl);
    track.push_back(d);
  }
  return track;
}

/// Noisy table keypoints as seen from the view: four corners and the two midline ends.
inline std::vector<Correspondence> render_keypoints(const ViewPreset& view, double sigma_p, std::mt19937_64& rng,
                                                    const TableModel& table = TableModel::standard()) {
  std::normal_distribution<double> N(0.0, 1.0);
  const CalibratedCamera cam = view.camera();
  std::array<Vec2, 4> corners;
  const auto w = table.corners();
  for (int i = 0; i < 4; ++i) corners[i] = project(cam, w[i]) + sigma_p * Vec2(N(rng), N(rng));
  const auto m = table.midline();
  std::array<Vec2, 2> mid{project(cam, m[0]) + sigma_p * Vec2(N(rng), N(rng)),
                          project(cam, m[1]) + sigma_p * Vec2(N(rng), N(rng))};
  return table_correspondences(table, corners, mid);
}

// ---------------------------------------------------------------------------
// Benchmark

enum class CalibMode { Known, Estimated };

inline std::string_view to_string(CalibMode m) { return m == CalibMode::Known ? "known" : "estimated"; }

inline CalibMode parse_calib_mode(std::string_view s) {
  if (s == "known") return CalibMode::Known;
  if (s == "estimated") return CalibMode::Estimated;
  throw Error(Errc::ParseError, "unknown calibration mode '" + std::string(s) + "'");
}

struct BenchConfig {
  std::vector<ViewName> views{ViewName::Side, ViewName::Oblique, ViewName::Back};
  std::vector<bool> noise_levels{false, true};
  std::vector<CalibMode> calib_modes{CalibMode::Known};
  int n_trajectories = 130;
  std::uint64_t seed = 1;
  NoiseModel noise = NoiseModel::standard();  // used for the noisy runs; seed is derived per trajectory
  double fps = 25.0;
  double focal = 1800.0;
  ImageSize image{1280, 720};
  bool use_blur = true;
  int jobs = 0;  // 0: one worker per hardware thread
  PhysParams params = PhysParams::table_tennis();
  ShotEnvelope envelope;
  SegConfig seg;
  EventConfig events;
  ReconOptions recon;
  SuccessCriteria success;
  CalibConfig calib;

  void validate() const {
    if (views.empty() || noise_levels.empty() || calib_modes.empty()) {
      throw Error(Errc::InvalidArgument, "benchmark needs at least one view, noise level and calibration mode");
    }
    if (n_trajectories < 1) throw Error(Errc::InvalidArgument, "n_trajectories must be >= 1");
    if (!(fps > 0.0)) throw Error(Errc::InvalidArgument, "fps must be positive");
    if (jobs < 0) throw Error(Errc::InvalidArgument, "jobs must be >= 0");
    noise.validate();
    seg.validate();
    params.validate();
  }
};

struct TrajectoryRecord {
  int index = 0;
  ViewName view = ViewName::Side;
  bool noisy = false;
  CalibMode calib = CalibMode::Known;
  int detections = 0;
  int observations = 0;  // used by the matched reconstruction
  bool success = false;
  bool converged = false;
  double mae_m = std::numeric_limits<double>::quiet_NaN();
  double reproj_rmse = std::numeric_limits<double>::quiet_NaN();
  double t_bounce_error = std::numeric_limits<double>::quiet_NaN();  // s
  double speed_true = 0.0;  // |v-| at the bounce, m/s
  std::string failure;      // empty on success
};

struct ViewSummary {
  ViewName view = ViewName::Side;
  bool noisy = false;
  CalibMode calib = CalibMode::Known;
  int count = 0;
  int successes = 0;
  double success_pct = 0.0;
  double mae_cm = std::numeric_limits<double>::quiet_NaN();  // mean over successes
};

struct EvalReport {
  std::vector<ViewSummary> rows;
  std::vector<TrajectoryRecord> records;

  const ViewSummary* row(ViewName view, bool noisy, CalibMode calib = CalibMode::Known) const {
    for (const auto& r : rows) {
      if (r.view == view && r.noisy == noisy && r.calib == calib) return &r;
    }
    return nullptr;
  }
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Detection → segmentation → events → anchor → fit, scored against the truth.
inline TrajectoryRecord evaluate_trajectory(const GroundTruthRally& gt, const ViewPreset& view, bool noisy,
                                            CalibMode mode, const BenchConfig& cfg, std::uint64_t noise_seed) {
  TrajectoryRecord rec;
  rec.view = view.name;
  rec.noisy = noisy;
  rec.calib = mode;
  const auto truth_bounces = gt.bounces();
  rec.speed_true = truth_bounces.empty() ? 0.0 : truth_bounces.front().before.v.norm();

  NoiseModel nm = noisy ? cfg.noise : NoiseModel::none();
  nm.seed = noise_seed;
  RenderOptions ro;
  ro.fps = cfg.fps;
  RallyTrack track = render_track(gt, view, nm, ro);
  rec.detections = static_cast<int>(track.size());
  if (!cfg.use_blur) {
    for (auto& d : track) d.blur_angle.reset();
  }

  try {
    CalibratedCamera cam = view.camera();
    if (mode == CalibMode::Estimated) {
      auto rng = detail::stream(noise_seed, 0x6b6579);
      const auto kp = render_keypoints(view, nm.sigma_p, rng);
      cam = estimate_focal(kp, view.size, cfg.calib).camera;
    }
    const auto segs = segment_rally(track, cfg.seg);
    const auto locs = locate_events(segs, frame_interval(track), cfg.events);
    const auto events = classify_events(segs, locs, cam, TableModel::standard(), cfg.params.r);
    const auto recs = reconstruct_rally(track, segs, events, cam, cfg.params, cfg.recon);
    if (truth_bounces.empty()) throw Error(Errc::InvalidArgument, "ground truth has no bounce");
    const double t_true = truth_bounces.front().t;
    const BounceReconstruction* match = nullptr;
    for (const auto& br : recs) {
      if (std::abs(br.event.t_star - t_true) < 0.1 &&
          (!match || std::abs(br.event.t_star - t_true) < std::abs(match->event.t_star - t_true))) {
        match = &br;
      }
    }
    if (!match) {
      rec.failure = recs.empty() ? "no bounce detected" : "no detected bounce near the true one";
      return rec;
    }
    rec.t_bounce_error = match->event.t_star - t_true;
    if (!match->result) {
      rec.failure = match->message;
      return rec;
    }
    const ReconResult& res = *match->result;
    rec.converged = res.converged;
    rec.reproj_rmse = res.reproj_rmse;
    rec.observations = static_cast<int>(res.obs_times.size());
    double err = 0.0;
    for (std::size_t k = 0; k < res.obs_times.size(); ++k) {
      err += (res.obs_positions[k] - gt.state_at(res.obs_times[k]).p).norm();
    }
    rec.mae_m = err / static_cast<double>(res.obs_times.size());
    rec.success = reconstruction_success(res, TableModel::standard(), cfg.success);
    if (!rec.success) rec.failure = res.converged ? "outside success bounds" : "did not converge";
  } catch (const Error& e) {
    rec.failure = e.what();
  }
  return rec;
}

/// Runs every (trajectory, view, noise level, calibration mode) combination.
/// Trajectories are shared across views so that view rows are comparable.
/// Output is independent of the worker count.
inline EvalReport run_benchmark(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<GroundTruthRally> rallies(static_cast<std::size_t>(cfg.n_trajectories));
  struct Job {
    int traj;
    ViewName view;
    bool noisy;
    CalibMode mode;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < cfg.n_trajectories; ++i) {
    for (auto view : cfg.views) {
      for (bool noisy : cfg.noise_levels) {
        for (auto mode : cfg.calib_modes) jobs.push_back({i, view, noisy, mode});
      }
    }
  }
  std::vector<TrajectoryRecord> records(jobs.size());

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs) : hw;
  auto run_pool = [workers](std::size_t n, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < std::min<std::size_t>(workers, n); ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  };

  run_pool(rallies.size(), [&](std::size_t i) {
    auto rng = detail::stream(cfg.seed, 0x73686f74, i);
    rallies[i] = random_shot(rng, cfg.params, cfg.envelope);
  });
  run_pool(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const ViewPreset view = make_view(job.view, cfg.focal, cfg.image);
    const auto noise_rng_seed = detail::stream(cfg.seed, 0x6e6f6973, static_cast<std::uint64_t>(job.traj),
                                               static_cast<std::uint64_t>(job.view))();
    records[j] = evaluate_trajectory(rallies[static_cast<std::size_t>(job.traj)], view, job.noisy, job.mode, cfg,
                                     noise_rng_seed);
    records[j].index = job.traj;
  });

  EvalReport report;
  for (auto view : cfg.views) {
    for (bool noisy : cfg.noise_levels) {
      for (auto mode : cfg.calib_modes) {
        ViewSummary row;
        row.view = view;
        row.noisy = noisy;
        row.calib = mode;
        double mae = 0.0;
        for (const auto& r : records) {
          if (r.view != view || r.noisy != noisy || r.calib != mode) continue;
          ++row.count;
          if (r.success) {
            ++row.successes;
            mae += r.mae_m;
          }
        }
        row.success_pct = row.count ? 100.0 * row.successes / row.count : 0.0;
        if (row.successes) row.mae_cm = 100.0 * mae / row.successes;
        report.rows.push_back(row);
      }
    }
  }
  report.records = std::move(records);
  return report;
}

}  // namespace tt3d
