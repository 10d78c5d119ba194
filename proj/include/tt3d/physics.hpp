#pragma once

// Ball flight (gravity, drag, Magnus) and the Coulomb-friction table bounce.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"

namespace tt3d {

struct BallState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();  // spin, rad/s
  double t = 0.0;
};

enum class Sport { TableTennis, Tennis };
enum class CourtSurface { Grass, Clay };

struct PhysParams {
  Sport sport = Sport::TableTennis;
  CourtSurface surface = CourtSurface::Grass;  // tennis only
  double m = 2.7e-3;
  double k_D = 3.8e-4;
  double k_M = 4.86e-6;
  Vec3 g = Vec3(0.0, 0.0, -9.81);
  double r = 0.02;
  double mu = 0.3;
  double k_COR = 0.85;
  double alpha_threshold = 0.4;
  double rho = 1.204;  // air density, tennis aerodynamics only

  static PhysParams table_tennis() { return PhysParams{}; }

  static PhysParams tennis(CourtSurface surface) {
    PhysParams p;
    p.sport = Sport::Tennis;
    p.surface = surface;
    p.m = 5.7e-2;
    p.r = 0.033;
    p.k_D = 0.0;
    p.k_M = 0.0;
    if (surface == CourtSurface::Grass) {
      p.mu = 0.55;
      p.k_COR = 0.68;
    } else {
      p.mu = 0.9;
      p.k_COR = 0.85;
    }
    return p;
  }

  void validate() const {
    if (!(m > 0.0) || !(r > 0.0)) throw Error(Errc::InvalidArgument, "mass and radius must be positive");
    if (!(k_COR > 0.0) || k_COR > 1.0) throw Error(Errc::InvalidArgument, "k_COR must lie in (0, 1]");
    if (!(mu >= 0.0)) throw Error(Errc::InvalidArgument, "mu must be non-negative");
    if (!(rho > 0.0)) throw Error(Errc::InvalidArgument, "air density must be positive");
  }
};

struct TennisCoefficients {
  double C_D = 0.0;
  double C_M = 0.0;
};

/// Drag and lift coefficients for a fuzzy tennis ball; speeds enter as norms.
inline TennisCoefficients tennis_coefficients(const Vec3& v, const Vec3& w) {
  const double speed = v.norm();
  const double spin = w.norm();
  TennisCoefficients c;
  c.C_D = 0.6204 - 9.76e-4 * (speed - 50.0) + (1.027e-4 - 2.24e-6 * (speed - 50.0)) * spin;
  c.C_M = spin * (4.68e-4 - 2.10e-5 * (speed - 50.0));
  return c;
}

struct FlightDerivative {
  Vec3 dp;
  Vec3 dv;
};

inline Vec3 flight_acceleration(const Vec3& v, const Vec3& w, const PhysParams& params) {
  if (params.sport == Sport::TableTennis) {
    return (-params.k_D * v.norm() * v + params.k_M * w.cross(v)) / params.m + params.g;
  }
  const auto c = tennis_coefficients(v, w);
  const double area_term = 0.5 * params.rho * M_PI * params.r * params.r;
  const double speed = v.norm();
  Vec3 force = -area_term * c.C_D * speed * v;
  const double spin = w.norm();
  if (spin >= 1e-9) {
    force += area_term * c.C_M * speed * w.cross(v) / spin;
  }
  return force / params.m + params.g;
}

/// Spin is constant in flight, so only (dp, dv) are returned.
inline FlightDerivative flight_derivative(const BallState& s, const PhysParams& params) {
  return {s.v, flight_acceleration(s.v, s.w, params)};
}

/// One classical RK4 step of signed length h (negative h integrates backward).
inline BallState rk4_step(const BallState& s, double h, const PhysParams& params) {
  const Vec3& w = s.w;
  const Vec3 k1p = s.v;
  const Vec3 k1v = flight_acceleration(s.v, w, params);
  const Vec3 v2 = s.v + 0.5 * h * k1v;
  const Vec3 k2p = v2;
  const Vec3 k2v = flight_acceleration(v2, w, params);
  const Vec3 v3 = s.v + 0.5 * h * k2v;
  const Vec3 k3p = v3;
  const Vec3 k3v = flight_acceleration(v3, w, params);
  const Vec3 v4 = s.v + h * k3v;
  const Vec3 k4p = v4;
  const Vec3 k4v = flight_acceleration(v4, w, params);

  BallState out;
  out.p = s.p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
  out.v = s.v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  out.w = w;
  out.t = s.t + h;
  return out;
}

enum class Direction { Forward, Backward };

/// Where the ball centre may not pass through z = r. Defaults to the infinite plane.
using SurfacePredicate = std::function<bool(const Vec3&)>;

struct FlightOptions {
  bool check_crossing = true;
  SurfacePredicate surface;  // empty: every (x, y) is surface
};

namespace detail {

inline bool crosses_surface(const BallState& a, const BallState& b, const PhysParams& params,
                            const FlightOptions& opts) {
  if (!opts.check_crossing) return false;
  const double za = a.p.z() - params.r;
  const double zb = b.p.z() - params.r;
  // states within a nanometre of the plane count as touching, not crossing
  constexpr double kTouch = 1e-9;
  if (!((za > kTouch && zb < -kTouch) || (za < -kTouch && zb > kTouch))) return false;
  if (!opts.surface) return true;
  const double s = za / (za - zb);
  return opts.surface(a.p + s * (b.p - a.p));
}

[[noreturn]] inline void throw_crossing(const BallState& a, const BallState& b) {
  const double lo = std::min(a.t, b.t);
  const double hi = std::max(a.t, b.t);
  throw Error(Errc::PlaneCrossing,
              "ball centre crosses the surface plane between t=" + std::to_string(lo) + " and t=" + std::to_string(hi));
}

}  // namespace detail

/// Propagates `s` to absolute time `t_target` with steps of at most `dt`,
/// shortening the final step to land exactly on the target.
inline BallState propagate(BallState s, double t_target, double dt, const PhysParams& params,
                           const FlightOptions& opts = {}) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidArgument, "dt must be positive");
  const double sign = t_target >= s.t ? 1.0 : -1.0;
  double remaining = std::abs(t_target - s.t);
  while (remaining > 1e-12) {
    const double h = std::min(dt, remaining);
    BallState next = rk4_step(s, sign * h, params);
    if (detail::crosses_surface(s, next, params, opts)) detail::throw_crossing(s, next);
    remaining -= h;
    s = next;
  }
  s.t = t_target;
  return s;
}

/// RK4 integration returning every state including both endpoints.
inline std::vector<BallState> integrate_flight(const BallState& s0, double dt, double duration, Direction direction,
                                               const PhysParams& params, const FlightOptions& opts = {}) {
  if (!(dt > 0.0)) throw Error(Errc::InvalidArgument, "dt must be positive");
  if (!(duration > 0.0)) throw Error(Errc::InvalidArgument, "duration must be positive");
  const double sign = direction == Direction::Forward ? 1.0 : -1.0;
  const auto steps = static_cast<long>(std::ceil(duration / dt - 1e-9));
  std::vector<BallState> out;
  out.reserve(static_cast<size_t>(steps) + 1);
  out.push_back(s0);
  BallState s = s0;
  for (long k = 0; k < steps; ++k) {
    const double h = std::min(dt, duration - static_cast<double>(k) * dt);
    BallState next = rk4_step(s, sign * h, params);
    if (detail::crosses_surface(s, next, params, opts)) detail::throw_crossing(s, next);
    out.push_back(next);
    s = next;
  }
  out.back().t = s0.t + sign * duration;
  return out;
}

// ---------------------------------------------------------------------------
// Bounce

enum class BounceRegime { Rolling, Sliding };

struct BounceMatrices {
  Mat3 A, B, C, D;
};

struct BounceOutcome {
  Vec3 v_plus;
  Vec3 w_plus;
  BounceRegime regime = BounceRegime::Rolling;
  double alpha = 0.0;
};

/// Slip coefficient; +inf when there is no tangential slip at contact.
inline double bounce_alpha(const Vec3& v_minus, const Vec3& w_minus, const PhysParams& params) {
  if (!(v_minus.z() < 0.0)) throw Error(Errc::BallMovingAway, "v_z must be negative at impact");
  const double sx = v_minus.x() - w_minus.y() * params.r;
  const double sy = v_minus.y() + w_minus.x() * params.r;
  const double slip = std::sqrt(sx * sx + sy * sy);
  if (slip < 1e-12) return std::numeric_limits<double>::infinity();
  return params.mu * (1.0 + params.k_COR) * std::abs(v_minus.z()) / slip;
}

/// Sliding matrices for a given alpha. At alpha = 0.4 they equal the rolling set.
inline BounceMatrices sliding_matrices(double alpha, const PhysParams& params) {
  const double r = params.r;
  BounceMatrices m;
  m.A << 1.0 - alpha, 0.0, 0.0, 0.0, 1.0 - alpha, 0.0, 0.0, 0.0, -params.k_COR;
  m.B << 0.0, alpha * r, 0.0, -alpha * r, 0.0, 0.0, 0.0, 0.0, 0.0;
  m.C << 0.0, -1.5 * alpha / r, 0.0, 1.5 * alpha / r, 0.0, 0.0, 0.0, 0.0, 0.0;
  m.D << 1.0 - 1.5 * alpha, 0.0, 0.0, 0.0, 1.0 - 1.5 * alpha, 0.0, 0.0, 0.0, 1.0;
  return m;
}

inline BounceMatrices rolling_matrices(const PhysParams& params) {
  const double r = params.r;
  BounceMatrices m;
  m.A << 0.6, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, -params.k_COR;
  m.B << 0.0, 0.4 * r, 0.0, -0.4 * r, 0.0, 0.0, 0.0, 0.0, 0.0;
  m.C << 0.0, -0.6 / r, 0.0, 0.6 / r, 0.0, 0.0, 0.0, 0.0, 0.0;
  m.D << 0.4, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 1.0;
  return m;
}

inline BounceOutcome apply_bounce(const Vec3& v_minus, const Vec3& w_minus, const PhysParams& params) {
  BounceOutcome out;
  out.alpha = bounce_alpha(v_minus, w_minus, params);
  out.regime = out.alpha >= params.alpha_threshold ? BounceRegime::Rolling : BounceRegime::Sliding;
  const BounceMatrices m =
      out.regime == BounceRegime::Rolling ? rolling_matrices(params) : sliding_matrices(out.alpha, params);
  out.v_plus = m.A * v_minus + m.B * w_minus;
  out.w_plus = m.C * v_minus + m.D * w_minus;
  return out;
}

inline std::string_view to_string(BounceRegime regime) {
  return regime == BounceRegime::Rolling ? "rolling" : "sliding";
}

}  // namespace tt3d
