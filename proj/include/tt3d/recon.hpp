#pragma once

// 3D reconstruction around a table bounce: the anchor comes from the bounce
// pixel and the calibration, then pre-bounce velocity and spin are fitted to
// the 2D detections on both sides of the bounce.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"
#include "tt3d/physics.hpp"
#include "tt3d/rallyseg.hpp"

namespace tt3d {

struct BounceAnchor {
  Vec3 position = Vec3::Zero();  // ball centre at contact
  double t_star = 0.0;
  Event source_event;
};

/// Ball-centre position at the bounce: the event pixel's ray meets the plane
/// lifted by the ball radius above the table surface.
inline BounceAnchor bounce_anchor(const CalibratedCamera& cam, const Event& event, const TableModel& table, double r,
                                  double margin = 0.5) {
  if (event.kind != EventKind::TableBounce) throw Error(Errc::InvalidArgument, "anchor needs a table bounce event");
  BounceAnchor anchor;
  anchor.position = intersect_ray_plane(pixel_ray(cam, event.image_point), table.plane().offset(r));
  anchor.t_star = event.t_star;
  anchor.source_event = event;
  if (!table.contains_xy(anchor.position, margin)) {
    throw Error(Errc::AnchorOutsideTable, "bounce anchor (" + std::to_string(anchor.position.x()) + ", " +
                                              std::to_string(anchor.position.y()) + ") is off the table");
  }
  return anchor;
}

struct ReconOptions {
  double dt = 1.0 / 500.0;         // integrator step, s
  double sample_dt = 1.0 / 200.0;  // spacing of the returned trajectory, s
  int max_iters = 200;
  double step_v = 1e-4;  // forward-difference step, m/s
  double step_w = 1e-2;  // forward-difference step, rad/s
  bool multi_start = true;
  double restart_rmse_px = 10.0;  // extra starts when the first fit is worse than this
  double max_spin = 1000.0;       // rad/s; faster fitted spin also triggers the extra starts
};

struct ReconProblem {
  CalibratedCamera camera;
  BounceAnchor anchor;
  std::vector<Detection> pre_obs;
  std::vector<Detection> post_obs;
  PhysParams params;
  Vec3 init_v = Vec3(0.0, 5.0, -3.0);
  Vec3 init_w = Vec3::Zero();
  TableModel table = TableModel::standard();
  ReconOptions options;

  std::size_t observation_count() const { return pre_obs.size() + post_obs.size(); }

  void validate() const {
    params.validate();
    if (observation_count() < 5) {
      throw Error(Errc::TooFewObservations,
                  "need at least 5 detections around the bounce, got " + std::to_string(observation_count()));
    }
    for (const auto& d : pre_obs) {
      if (!(d.t < anchor.t_star)) throw Error(Errc::InvalidArgument, "pre-bounce detection after the bounce time");
    }
    for (const auto& d : post_obs) {
      if (!(d.t > anchor.t_star)) throw Error(Errc::InvalidArgument, "post-bounce detection before the bounce time");
    }
  }
};

struct ReconResult {
  Vec3 v_minus = Vec3::Zero();
  Vec3 w_minus = Vec3::Zero();
  Vec3 v_plus = Vec3::Zero();
  Vec3 w_plus = Vec3::Zero();
  BounceRegime regime = BounceRegime::Rolling;
  std::vector<BallState> trajectory;  // both states at t_star are included (pre and post)
  std::vector<double> obs_times;      // pre_obs ++ post_obs
  std::vector<Vec3> obs_positions;    // fitted ball centres at obs_times
  double reproj_rmse = 0.0;           // px
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;  // L_ball after every accepted step, starting at the initial guess
  bool identifiability_warning = false;
  int starts_tried = 0;
};

namespace detail {

// Ball states at the requested times (already sorted away from t_star), integrated from `from`.
inline std::vector<BallState> states_at(BallState from, const std::vector<double>& times, const ReconProblem& pb) {
  FlightOptions opts;
  const TableModel table = pb.table;
  opts.surface = [table](const Vec3& p) { return table.contains_xy(p); };
  std::vector<BallState> out;
  out.reserve(times.size());
  for (double t : times) {
    from = propagate(from, t, pb.options.dt, pb.params, opts);
    out.push_back(from);
  }
  return out;
}

inline std::vector<double> times_of(const std::vector<Detection>& obs, bool reverse) {
  std::vector<double> t;
  for (const auto& d : obs) t.push_back(d.t);
  std::sort(t.begin(), t.end());
  if (reverse) std::reverse(t.begin(), t.end());
  return t;
}

}  // namespace detail

/// 3D ball centres at the observation times, ordered pre_obs ++ post_obs.
inline std::vector<Vec3> predict_positions(const ReconProblem& pb, const Vec3& v_minus, const Vec3& w_minus) {
  BallState anchor;
  anchor.p = pb.anchor.position;
  anchor.v = v_minus;
  anchor.w = w_minus;
  anchor.t = pb.anchor.t_star;

  std::vector<Vec3> out(pb.observation_count());
  auto fill = [&](const std::vector<Detection>& obs, std::size_t offset, const std::vector<BallState>& states) {
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const auto it = std::find_if(states.begin(), states.end(), [&](const BallState& s) { return s.t == obs[k].t; });
      out[offset + k] = it->p;
    }
  };
  if (!pb.pre_obs.empty()) fill(pb.pre_obs, 0, detail::states_at(anchor, detail::times_of(pb.pre_obs, true), pb));
  if (!pb.post_obs.empty()) {
    const auto b = apply_bounce(v_minus, w_minus, pb.params);
    BallState after = anchor;
    after.v = b.v_plus;
    after.w = b.w_plus;
    fill(pb.post_obs, pb.pre_obs.size(), detail::states_at(after, detail::times_of(pb.post_obs, false), pb));
  }
  return out;
}

/// Projected ball positions at the observation times, ordered pre_obs ++ post_obs.
inline std::vector<Vec2> predict_observations(const ReconProblem& pb, const Vec3& v_minus, const Vec3& w_minus) {
  const auto pos = predict_positions(pb, v_minus, w_minus);
  std::vector<Vec2> px;
  px.reserve(pos.size());
  for (const auto& p : pos) px.push_back(project(pb.camera, p));
  return px;
}

namespace detail {

using Vec6 = Eigen::Matrix<double, 6, 1>;

inline Eigen::VectorXd residuals(const ReconProblem& pb, const Vec6& x) {
  const auto px = predict_observations(pb, x.head<3>(), x.tail<3>());
  Eigen::VectorXd r(2 * px.size());
  std::size_t k = 0;
  for (const auto* obs : {&pb.pre_obs, &pb.post_obs}) {
    for (const auto& d : *obs) {
      r(2 * k) = px[k].x() - d.u;
      r(2 * k + 1) = px[k].y() - d.v;
      ++k;
    }
  }
  return r;
}

inline Vec6 pack(const Vec3& v, const Vec3& w) {
  Vec6 x;
  x << v, w;
  return x;
}

}  // namespace detail

/// Forward-difference Jacobian of the stacked pixel residuals with respect to [v-, w-].
inline Eigen::MatrixXd observation_jacobian(const ReconProblem& pb, const Vec3& v_minus, const Vec3& w_minus,
                                            const Eigen::VectorXd* r0 = nullptr) {
  const detail::Vec6 x = detail::pack(v_minus, w_minus);
  const Eigen::VectorXd base = r0 ? *r0 : detail::residuals(pb, x);
  Eigen::MatrixXd J(base.size(), 6);
  for (int i = 0; i < 6; ++i) {
    const double h = i < 3 ? pb.options.step_v : pb.options.step_w;
    detail::Vec6 xh = x;
    xh(i) += h;
    J.col(i) = (detail::residuals(pb, xh) - base) / h;
  }
  return J;
}

/// Sum of squared pixel residuals.
inline double ball_loss(const ReconProblem& pb, const Vec3& v_minus, const Vec3& w_minus) {
  return detail::residuals(pb, detail::pack(v_minus, w_minus)).squaredNorm();
}

/// Longitudinal direction of travel (+1 or -1) read from the detections on the
/// table plane, used to pick the sign of the initial velocity.
inline double longitudinal_sign(const ReconProblem& pb) {
  std::vector<const Detection*> all;
  for (const auto& d : pb.pre_obs) all.push_back(&d);
  for (const auto& d : pb.post_obs) all.push_back(&d);
  if (all.size() < 2) return 1.0;
  std::sort(all.begin(), all.end(), [](const Detection* a, const Detection* b) { return a->t < b->t; });
  const Plane plane = pb.table.plane().offset(pb.params.r);
  try {
    const Vec3 a = intersect_ray_plane(pixel_ray(pb.camera, all.front()->px()), plane);
    const Vec3 b = intersect_ray_plane(pixel_ray(pb.camera, all.back()->px()), plane);
    return b.y() >= a.y() ? 1.0 : -1.0;
  } catch (const Error&) {
    return 1.0;
  }
}

inline Vec3 initial_velocity_guess(const ReconProblem& pb) { return Vec3(0.0, 5.0 * longitudinal_sign(pb), -3.0); }

namespace detail {

struct LmRun {
  Vec6 x = Vec6::Zero();
  double cost = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
  std::vector<double> history;
};

inline double safe_cost(const ReconProblem& pb, const Vec6& x, Eigen::VectorXd* r_out = nullptr) {
  try {
    Eigen::VectorXd r = residuals(pb, x);
    if (r_out) *r_out = r;
    const double c = r.squaredNorm();
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Levenberg-Marquardt with Marquardt's diagonal scaling.
inline LmRun levenberg_marquardt(const ReconProblem& pb, Vec6 x) {
  LmRun run;
  Eigen::VectorXd r;
  double cost = safe_cost(pb, x, &r);
  if (!std::isfinite(cost)) return run;
  run.history.push_back(cost);
  double mu = 1e-3;
  for (; run.iterations < pb.options.max_iters; ++run.iterations) {
    Eigen::MatrixXd J;
    try {
      J = observation_jacobian(pb, x.head<3>(), x.tail<3>(), &r);
    } catch (const Error&) {
      break;
    }
    const Eigen::Matrix<double, 6, 6> H = J.transpose() * J;
    const Vec6 g = J.transpose() * r;
    Vec6 d = H.diagonal();
    const double floor = std::max(1e-12, 1e-9 * d.maxCoeff());
    for (int i = 0; i < 6; ++i) d(i) = std::max(d(i), floor);

    bool accepted = false;
    while (mu < 1e12) {
      Eigen::Matrix<double, 6, 6> A = H;
      A.diagonal() += mu * d;
      const Vec6 step = -A.ldlt().solve(g);
      const Vec6 xn = x + step;
      Eigen::VectorXd rn;
      const double cn = safe_cost(pb, xn, &rn);
      if (cn < cost) {
        const double gain = cost - cn;
        x = xn;
        r = rn;
        cost = cn;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        run.history.push_back(cost);
        if (gain <= 1e-10 * cost + 1e-14 || step.norm() <= 1e-10 * (x.norm() + 1e-10)) run.converged = true;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) {
      // no descent direction left at any damping: a local minimum to numerical precision
      run.converged = true;
      ++run.iterations;
      break;
    }
    if (run.converged) {
      ++run.iterations;
      break;
    }
  }
  run.x = x;
  run.cost = cost;
  return run;
}

}  // namespace detail

/// Dense trajectory through the observation window at the configured sample
/// spacing, time-ordered, passing through the anchor at t_star.
inline std::vector<BallState> sample_trajectory(const ReconProblem& pb, const Vec3& v_minus, const Vec3& w_minus) {
  const double t0 = pb.pre_obs.empty() ? pb.anchor.t_star : detail::times_of(pb.pre_obs, false).front();
  const double t1 = pb.post_obs.empty() ? pb.anchor.t_star : detail::times_of(pb.post_obs, true).front();
  const double ts = pb.anchor.t_star;
  const double h = pb.options.sample_dt;
  std::vector<double> back, fwd;
  for (int k = 1; ts - k * h > t0 - 1e-12; ++k) back.push_back(ts - k * h);
  if (back.empty() || back.back() > t0) back.push_back(t0);
  for (int k = 1; ts + k * h < t1 + 1e-12; ++k) fwd.push_back(ts + k * h);
  if (fwd.empty() || fwd.back() < t1) fwd.push_back(t1);
  if (pb.pre_obs.empty()) back.clear();
  if (pb.post_obs.empty()) fwd.clear();

  FlightOptions no_check;
  no_check.check_crossing = false;
  BallState anchor;
  anchor.p = pb.anchor.position;
  anchor.v = v_minus;
  anchor.w = w_minus;
  anchor.t = ts;
  std::vector<BallState> out;
  BallState s = anchor;
  for (double t : back) {
    s = propagate(s, t, pb.options.dt, pb.params, no_check);
    out.push_back(s);
  }
  std::reverse(out.begin(), out.end());
  out.push_back(anchor);
  const auto b = apply_bounce(v_minus, w_minus, pb.params);
  s = anchor;
  s.v = b.v_plus;
  s.w = b.w_plus;
  out.push_back(s);
  for (double t : fwd) {
    s = propagate(s, t, pb.options.dt, pb.params, no_check);
    out.push_back(s);
  }
  return out;
}

/// Fits pre-bounce velocity and spin by damped least squares on the pixel
/// residuals. The initial guess is tried in both bounce regimes; further starts
/// (opposite travel direction, then topspin and backspin) are tried when no fit
/// converges with a small residual and a plausible spin. Returns
/// converged = false if the iteration cap was hit.
inline ReconResult reconstruct(const ReconProblem& pb) {
  pb.validate();
  // The bounce switches regime at a kink the optimiser does not cross, so the
  // initial guess is paired with one whose spin halves the contact slip.
  const double r = pb.params.r;
  const auto rolling = [&](const Vec3& v) {
    const Vec3& w = pb.init_w;
    return Vec3(w.x() - 0.5 * (v.y() + w.x() * r) / r, w.y() + 0.5 * (v.x() - w.y() * r) / r, w.z());
  };
  std::vector<detail::Vec6> starts{detail::pack(pb.init_v, pb.init_w),
                                   detail::pack(pb.init_v, rolling(pb.init_v))};
  const std::size_t always = pb.options.multi_start ? 2 : 1;
  if (pb.options.multi_start) {
    const Vec3 flipped(pb.init_v.x(), -pb.init_v.y(), pb.init_v.z());
    starts.push_back(detail::pack(flipped, pb.init_w));
    starts.push_back(detail::pack(flipped, rolling(flipped)));
    starts.push_back(detail::pack(pb.init_v, Vec3(30.0, 0.0, 0.0)));
    starts.push_back(detail::pack(pb.init_v, Vec3(-30.0, 0.0, 0.0)));
  }
  if (!pb.options.multi_start) starts.resize(1);
  const double n_obs = static_cast<double>(pb.observation_count());
  auto rmse_of = [&](double cost) { return std::sqrt(cost / n_obs); };
  auto acceptable = [&](const detail::LmRun& run) {
    return run.converged && rmse_of(run.cost) < pb.options.restart_rmse_px &&
           run.x.tail<3>().norm() <= pb.options.max_spin;
  };
  auto better = [&](const detail::LmRun& a, const detail::LmRun& b) {
    if (acceptable(a) != acceptable(b)) return acceptable(a);
    if (a.converged != b.converged) return a.converged;
    return a.cost < b.cost;
  };

  detail::LmRun best;
  int tried = 0;
  for (const auto& x0 : starts) {
    auto run = detail::levenberg_marquardt(pb, x0);
    ++tried;
    if (std::isfinite(run.cost) && (!std::isfinite(best.cost) || better(run, best))) best = std::move(run);
    if (static_cast<std::size_t>(tried) >= always && std::isfinite(best.cost) && acceptable(best)) break;
  }
  if (!std::isfinite(best.cost)) {
    throw Error(Errc::NoConvergence, "no start produced a valid trajectory through the observations");
  }

  ReconResult res;
  res.v_minus = best.x.head<3>();
  res.w_minus = best.x.tail<3>();
  const auto b = apply_bounce(res.v_minus, res.w_minus, pb.params);
  res.v_plus = b.v_plus;
  res.w_plus = b.w_plus;
  res.regime = b.regime;
  res.reproj_rmse = rmse_of(best.cost);
  res.converged = best.converged;
  res.iterations = best.iterations;
  res.cost_history = std::move(best.history);
  res.identifiability_warning = pb.post_obs.size() < 3;
  res.starts_tried = tried;
  res.trajectory = sample_trajectory(pb, res.v_minus, res.w_minus);
  for (const auto* obs : {&pb.pre_obs, &pb.post_obs}) {
    for (const auto& d : *obs) res.obs_times.push_back(d.t);
  }
  res.obs_positions = predict_positions(pb, res.v_minus, res.w_minus);
  return res;
}

struct SuccessCriteria {
  double max_rmse_px = 10.0;
  double play_margin = 3.0;  // m beyond the table edges
  double max_height = 5.0;   // m above the surface
};

/// Benchmark notion of a usable reconstruction: converged, small residual, and
/// the reconstructed flight stays inside the play volume around the table
/// (the same volume synthetic rallies are generated in).
inline bool reconstruction_success(const ReconResult& res, const TableModel& table,
                                   const SuccessCriteria& criteria = {}) {
  if (!res.converged || !(res.reproj_rmse < criteria.max_rmse_px)) return false;
  for (const auto& s : res.trajectory) {
    if (!table.contains_xy(s.p, criteria.play_margin)) return false;
    if (s.p.z() < -table.height || s.p.z() > criteria.max_height) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Whole rally

struct BounceReconstruction {
  Event event;
  std::optional<BounceAnchor> anchor;
  std::optional<ReconResult> result;
  std::optional<Errc> error;
  std::string message;
  std::size_t pre_count = 0;
  std::size_t post_count = 0;
};

using CameraAt = std::function<CalibratedCamera(double t)>;

/// Observations for the bounce between two adjacent segments, split at t_star.
inline std::pair<std::vector<Detection>, std::vector<Detection>> bounce_window(const RallyTrack& track,
                                                                               const std::vector<Segment>& segments,
                                                                               const Event& event) {
  std::vector<Detection> pre, post;
  const auto& left = segments.at(event.left_segment);
  const auto& right = segments.at(event.right_segment);
  for (std::size_t k = left.start_idx; k <= right.end_idx; ++k) {
    if (track[k].t < event.t_star) pre.push_back(track[k]);
    else if (track[k].t > event.t_star) post.push_back(track[k]);
  }
  return {pre, post};
}

/// One reconstruction per table bounce, in time order. Failures are recorded
/// per bounce and do not stop the rest of the rally.
inline std::vector<BounceReconstruction> reconstruct_rally(const RallyTrack& track, const std::vector<Segment>& segments,
                                                           const std::vector<Event>& events, const CameraAt& camera_at,
                                                           const PhysParams& params, const ReconOptions& options = {},
                                                           const TableModel& table = TableModel::standard()) {
  std::vector<BounceReconstruction> out;
  for (const auto& ev : events) {
    if (ev.kind != EventKind::TableBounce) continue;
    BounceReconstruction br;
    br.event = ev;
    try {
      ReconProblem pb;
      pb.camera = camera_at(ev.t_star);
      pb.params = params;
      pb.options = options;
      pb.table = table;
      br.anchor = bounce_anchor(pb.camera, ev, table, params.r);
      pb.anchor = *br.anchor;
      std::tie(pb.pre_obs, pb.post_obs) = bounce_window(track, segments, ev);
      br.pre_count = pb.pre_obs.size();
      br.post_count = pb.post_obs.size();
      pb.init_v = initial_velocity_guess(pb);
      br.result = reconstruct(pb);
    } catch (const Error& e) {
      br.error = e.code();
      br.message = e.what();
    }
    out.push_back(std::move(br));
  }
  std::sort(out.begin(), out.end(),
            [](const BounceReconstruction& a, const BounceReconstruction& b) { return a.event.t_star < b.event.t_star; });
  return out;
}

inline std::vector<BounceReconstruction> reconstruct_rally(const RallyTrack& track, const std::vector<Segment>& segments,
                                                           const std::vector<Event>& events,
                                                           const CalibratedCamera& camera, const PhysParams& params,
                                                           const ReconOptions& options = {},
                                                           const TableModel& table = TableModel::standard()) {
  return reconstruct_rally(
      track, segments, events, [&camera](double) { return camera; }, params, options, table);
}

}  // namespace tt3d
