#pragma once

// Rally segmentation: piecewise degree-2 fits of the 2D detection track,
// selected by dynamic programming, plus event timing and classification.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"

namespace tt3d {

struct Detection {
  int frame = 0;
  double t = 0.0;
  double u = 0.0;
  double v = 0.0;
  std::optional<double> blur_angle;   // radians, image axes (u right, v down)
  std::optional<double> blur_length;  // pixels

  Vec2 px() const { return Vec2(u, v); }
};

using RallyTrack = std::vector<Detection>;

/// Coefficients are ascending: P(t) = c0 + c1 t + c2 t^2, with t in seconds.
struct Segment {
  std::size_t start_idx = 0;
  std::size_t end_idx = 0;  // inclusive
  std::array<double, 3> coeff_u{};
  std::array<double, 3> coeff_v{};
  double fit_cost = 0.0;  // summed L1 residual, px
  double t_start = 0.0;
  double t_end = 0.0;

  std::size_t size() const { return end_idx - start_idx + 1; }
  Vec2 eval(double t) const {
    return Vec2(coeff_u[0] + t * (coeff_u[1] + t * coeff_u[2]), coeff_v[0] + t * (coeff_v[1] + t * coeff_v[2]));
  }
  Vec2 velocity(double t) const {
    return Vec2(coeff_u[1] + 2.0 * t * coeff_u[2], coeff_v[1] + 2.0 * t * coeff_v[2]);
  }
};

struct SegConfig {
  double lambda = 30.0;       // px per extra segment
  double blur_weight = 5.0;   // px per radian of blur disagreement
  std::size_t min_segment_len = 3;
  int max_gap_frames = 6;     // a segment may not span more missing frames than this
  int irls_rounds = 3;

  void validate() const {
    if (!(lambda > 0.0)) throw Error(Errc::InvalidArgument, "lambda must be positive");
    if (!(blur_weight >= 0.0)) throw Error(Errc::InvalidArgument, "blur_weight must be non-negative");
    if (min_segment_len < 3) throw Error(Errc::InvalidArgument, "min_segment_len must be >= 3");
  }
};

enum class EventKind { TableBounce, RacketStrike };

struct Event {
  EventKind kind = EventKind::TableBounce;
  double t_star = 0.0;
  Vec2 image_point = Vec2::Zero();
  std::size_t left_segment = 0;
  std::size_t right_segment = 0;
  bool low_confidence = false;
};

inline std::string_view to_string(EventKind kind) {
  return kind == EventKind::TableBounce ? "bounce" : "strike";
}

namespace detail {

struct Quadratic {
  std::array<double, 3> coeff{};  // in normalised time tau
  double cost = 0.0;
};

// Degree-2 least-absolute-deviation fit via IRLS in normalised time.
inline Quadratic l1_quadratic(const std::vector<double>& tau, const std::vector<double>& y, int rounds) {
  const std::size_t n = tau.size();
  std::vector<double> w(n, 1.0);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int round = 0; round <= rounds; ++round) {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::Vector3d phi(1.0, tau[k], tau[k] * tau[k]);
      A += w[k] * phi * phi.transpose();
      b += w[k] * y[k] * phi;
    }
    c = A.ldlt().solve(b);
    if (round == rounds) break;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = std::abs(y[k] - (c[0] + tau[k] * (c[1] + tau[k] * c[2])));
      w[k] = 1.0 / std::max(r, 1e-6);
    }
  }
  Quadratic q;
  q.coeff = {c[0], c[1], c[2]};
  for (std::size_t k = 0; k < n; ++k) q.cost += std::abs(y[k] - (c[0] + tau[k] * (c[1] + tau[k] * c[2])));
  return q;
}

// P(tau) with tau = (t - m) / s, rewritten in powers of t.
inline std::array<double, 3> to_absolute_time(const std::array<double, 3>& c, double m, double s) {
  const double a = c[0], b = c[1] / s, q = c[2] / (s * s);
  return {a - b * m + q * m * m, b - 2.0 * q * m, q};
}

// Blur streaks carry orientation only, so angles are compared modulo pi.
inline double axial_difference(double a, double b) {
  double d = std::fmod(std::abs(a - b), M_PI);
  return std::min(d, M_PI - d);
}

}  // namespace detail

inline Segment fit_segment(const RallyTrack& track, std::size_t i, std::size_t j, int irls_rounds = 3) {
  if (j >= track.size() || j < i || j - i < 2) throw Error(Errc::TooFewPoints, "a parabola needs at least 3 points");
  const std::size_t n = j - i + 1;
  const double m = 0.5 * (track[i].t + track[j].t);
  const double s = std::max(0.5 * (track[j].t - track[i].t), 1e-9);
  std::vector<double> tau(n), u(n), v(n);
  for (std::size_t k = 0; k < n; ++k) {
    tau[k] = (track[i + k].t - m) / s;
    u[k] = track[i + k].u;
    v[k] = track[i + k].v;
  }
  const auto qu = detail::l1_quadratic(tau, u, irls_rounds);
  const auto qv = detail::l1_quadratic(tau, v, irls_rounds);
  Segment seg;
  seg.start_idx = i;
  seg.end_idx = j;
  seg.coeff_u = detail::to_absolute_time(qu.coeff, m, s);
  seg.coeff_v = detail::to_absolute_time(qv.coeff, m, s);
  seg.fit_cost = qu.cost + qv.cost;
  seg.t_start = track[i].t;
  seg.t_end = track[j].t;
  return seg;
}

inline double blur_residual(const Segment& seg, const Detection& det) {
  if (!det.blur_angle) throw Error(Errc::NoBlurData, "detection has no blur angle");
  const Vec2 vel = seg.velocity(det.t);
  return detail::axial_difference(*det.blur_angle, std::atan2(vel.y(), vel.x()));
}

/// Positional L1 cost plus weighted blur disagreement of one candidate segment.
inline double segment_cost(const RallyTrack& track, const Segment& seg, const SegConfig& cfg) {
  double cost = seg.fit_cost;
  if (cfg.blur_weight > 0.0) {
    for (std::size_t k = seg.start_idx; k <= seg.end_idx; ++k) {
      if (track[k].blur_angle) cost += cfg.blur_weight * blur_residual(seg, track[k]);
    }
  }
  return cost;
}

/// Segment i..j is admissible: long enough and no occlusion gap above the limit.
inline bool segment_admissible(const RallyTrack& track, std::size_t i, std::size_t j, const SegConfig& cfg) {
  if (j < i || j - i + 1 < cfg.min_segment_len) return false;
  for (std::size_t k = i; k < j; ++k) {
    if (track[k + 1].frame - track[k].frame - 1 > cfg.max_gap_frames) return false;
  }
  return true;
}

/// Table of candidate segment costs; +inf where inadmissible. Indexed [i][j].
inline std::vector<std::vector<double>> segment_cost_table(const RallyTrack& track, const SegConfig& cfg) {
  const std::size_t n = track.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> table(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + cfg.min_segment_len - 1; j < n; ++j) {
      if (!segment_admissible(track, i, j, cfg)) {
        // gaps only get worse as j grows
        if (j - i + 1 >= cfg.min_segment_len) break;
        continue;
      }
      table[i][j] = segment_cost(track, fit_segment(track, i, j, cfg.irls_rounds), cfg);
    }
  }
  return table;
}

/// Total objective of a given segmentation: fit costs + blur terms + lambda per segment.
inline double segmentation_objective(const RallyTrack& track, const std::vector<Segment>& segs, const SegConfig& cfg) {
  double total = 0.0;
  for (const auto& s : segs) total += segment_cost(track, s, cfg) + cfg.lambda;
  return total;
}

/// Exact minimiser of the segmentation objective over all breakpoint sets.
inline std::vector<Segment> segment_rally(const RallyTrack& track, const SegConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = track.size();
  if (n < cfg.min_segment_len) throw Error(Errc::TrackTooShort, "track has " + std::to_string(n) + " detections");
  for (std::size_t k = 1; k < n; ++k) {
    if (!(track[k].t > track[k - 1].t)) throw Error(Errc::InvalidArgument, "detection times must increase");
  }
  const auto costs = segment_cost_table(track, cfg);
  const double inf = std::numeric_limits<double>::infinity();
  // best[j]: optimum for the prefix of length j
  std::vector<double> best(n + 1, inf);
  std::vector<std::size_t> prev(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t j = cfg.min_segment_len; j <= n; ++j) {
    for (std::size_t i = 0; i + cfg.min_segment_len <= j; ++i) {
      if (best[i] == inf) continue;
      const double c = costs[i][j - 1];
      if (c == inf) continue;
      const double total = best[i] + c + cfg.lambda;
      if (total < best[j]) {
        best[j] = total;
        prev[j] = i;
      }
    }
  }
  if (best[n] == inf) throw Error(Errc::TrackTooShort, "no admissible segmentation (gaps or short pieces)");
  std::vector<Segment> segs;
  for (std::size_t j = n; j > 0; j = prev[j]) segs.push_back(fit_segment(track, prev[j], j - 1, cfg.irls_rounds));
  std::reverse(segs.begin(), segs.end());
  return segs;
}

struct EventConfig {
  double window_frames = 2.0;  // search margin on each side, in frame intervals
  double gate_px = 20.0;
};

struct EventLocation {
  double t_star = 0.0;
  Vec2 point = Vec2::Zero();
  double distance = 0.0;  // px between the two curves at t_star
};

/// Median spacing of detection times.
inline double frame_interval(const RallyTrack& track) {
  if (track.size() < 2) return 1.0 / 25.0;
  std::vector<double> dts;
  dts.reserve(track.size() - 1);
  for (std::size_t k = 1; k < track.size(); ++k) {
    const int df = std::max(1, track[k].frame - track[k - 1].frame);
    dts.push_back((track[k].t - track[k - 1].t) / df);
  }
  std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
  return dts[dts.size() / 2];
}

/// Time where the two fitted curves come closest, within the gap window.
inline EventLocation locate_event(const Segment& left, const Segment& right, double frame_dt,
                                  const EventConfig& cfg = {}) {
  if (!(frame_dt > 0.0)) throw Error(Errc::InvalidArgument, "frame interval must be positive");
  const double lo = left.t_end - cfg.window_frames * frame_dt;
  const double hi = right.t_start + cfg.window_frames * frame_dt;
  if (!(hi > lo)) throw Error(Errc::InvalidArgument, "segments are not ordered in time");
  auto dist2 = [&](double t) { return (left.eval(t) - right.eval(t)).squaredNorm(); };

  constexpr int kSamples = 400;
  int best_k = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= kSamples; ++k) {
    const double d = dist2(lo + (hi - lo) * k / kSamples);
    if (d < best) {
      best = d;
      best_k = k;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best_k - 1) / kSamples;
  double b = lo + (hi - lo) * std::min(kSamples, best_k + 1) / kSamples;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = dist2(x1), f2 = dist2(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-13 * std::max(1.0, std::abs(a)); ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = dist2(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = dist2(x2);
    }
  }
  EventLocation loc;
  loc.t_star = 0.5 * (a + b);
  loc.distance = std::sqrt(dist2(loc.t_star));
  if (loc.distance > cfg.gate_px) {
    throw Error(Errc::NoIntersectionInWindow,
                "closest approach " + std::to_string(loc.distance) + " px exceeds the gate");
  }
  loc.point = 0.5 * (left.eval(loc.t_star) + right.eval(loc.t_star));
  return loc;
}

namespace detail {

// Image velocity split into the image directions of world +Y and world +Z at a
// table point; returns the +Y coefficient, or nothing if the two directions
// are too close to tell apart.
inline std::optional<double> longitudinal_rate(const Vec2& image_velocity, const CalibratedCamera& cam,
                                               const Vec3& at) {
  const Vec2 p0 = project(cam, at);
  const Vec2 a = (project(cam, at + Vec3(0.0, 0.1, 0.0)) - p0).normalized();
  const Vec2 b = (project(cam, at + Vec3(0.0, 0.0, 0.1)) - p0).normalized();
  const double det = a.x() * b.y() - a.y() * b.x();
  constexpr double kMinSine = 0.25;
  if (std::abs(det) < kMinSine) return std::nullopt;
  return (image_velocity.x() * b.y() - image_velocity.y() * b.x()) / det;
}

}  // namespace detail

/// A racket strike is an event the ball cannot have had on the table: either
/// its point lies off the table, or the longitudinal direction of travel
/// reverses across it. Longitudinal motion is read from the image velocities
/// of the two curves, separated from vertical motion using the calibration.
/// When that separation is ill-conditioned (camera looking along the table)
/// an on-table event is taken as a bounce and flagged low-confidence.
inline std::vector<Event> classify_events(const std::vector<Segment>& segments,
                                          const std::vector<std::optional<EventLocation>>& locations,
                                          const CalibratedCamera& cam,
                                          const TableModel& table = TableModel::standard(), double ball_radius = 0.02,
                                          double table_margin = 0.1) {
  if (!segments.empty() && locations.size() + 1 != segments.size()) {
    throw Error(Errc::InvalidArgument, "need one location slot per adjacent segment pair");
  }
  std::vector<Event> events;
  for (std::size_t k = 0; k < locations.size(); ++k) {
    if (!locations[k]) continue;
    const auto& loc = *locations[k];
    const Segment& left = segments[k];
    const Segment& right = segments[k + 1];
    Event ev;
    ev.t_star = loc.t_star;
    ev.image_point = loc.point;
    ev.left_segment = k;
    ev.right_segment = k + 1;

    std::optional<Vec3> on_plane;
    try {
      on_plane = intersect_ray_plane(pixel_ray(cam, loc.point), table.plane().offset(ball_radius));
    } catch (const Error&) {
    }
    if (!on_plane || !table.contains_xy(*on_plane, table_margin)) {
      // rays that miss the table plane or land beyond it cannot be bounces
      ev.kind = EventKind::RacketStrike;
      ev.low_confidence = !on_plane.has_value();
      events.push_back(ev);
      continue;
    }
    std::optional<double> before, after;
    try {
      before = detail::longitudinal_rate(left.velocity(loc.t_star), cam, *on_plane);
      after = detail::longitudinal_rate(right.velocity(loc.t_star), cam, *on_plane);
    } catch (const Error&) {
    }
    constexpr double kMinRate = 1.0;  // px/s
    if (!before || !after || std::abs(*before) < kMinRate || std::abs(*after) < kMinRate) {
      ev.kind = EventKind::TableBounce;
      ev.low_confidence = true;
    } else {
      ev.kind = (*before > 0.0) != (*after > 0.0) ? EventKind::RacketStrike : EventKind::TableBounce;
    }
    events.push_back(ev);
  }
  return events;
}

/// Locates every breakpoint; pairs whose curves do not meet get an empty slot.
inline std::vector<std::optional<EventLocation>> locate_events(const std::vector<Segment>& segments, double frame_dt,
                                                               const EventConfig& cfg = {}) {
  std::vector<std::optional<EventLocation>> out;
  for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
    try {
      out.emplace_back(locate_event(segments[k], segments[k + 1], frame_dt, cfg));
    } catch (const Error& e) {
      if (e.code() != Errc::NoIntersectionInWindow) throw;
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace tt3d
