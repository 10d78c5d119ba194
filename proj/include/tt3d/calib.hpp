#pragma once

// Camera calibration from table keypoints: pose at fixed focal length,
// alternating focal-length search, corner-ordering disambiguation and a
// Kalman filter for moving/zooming cameras.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"

namespace tt3d {

struct Correspondence {
  Vec3 world = Vec3::Zero();
  Vec2 image = Vec2::Zero();
  FeatureLabel label = FeatureLabel::Other;
};

struct CalibConfig {
  double f0 = 1500.0;
  double epsilon = 1e-3;  // px, on the change of summed reprojection error
  int max_iters = 50;
  double f_min = 500.0;
  double f_max = 5000.0;
  double max_camera_distance = 10.0;  // m from the table centre

  void validate() const {
    if (!(f_min < f0 && f0 < f_max)) throw Error(Errc::InvalidArgument, "need f_min < f0 < f_max");
    if (max_iters < 1) throw Error(Errc::InvalidArgument, "max_iters must be >= 1");
    if (!(epsilon > 0.0)) throw Error(Errc::InvalidArgument, "epsilon must be positive");
  }
};

struct PnPResult {
  Pose pose;
  double rmse = 0.0;
  double total_error = 0.0;  // sum of per-point pixel distances
  int iterations = 0;
};

namespace detail {

inline double summed_error(const std::vector<Correspondence>& corrs, const Intrinsics& in, const Pose& pose,
                           double* sq_sum = nullptr) {
  double total = 0.0, sq = 0.0;
  for (const auto& c : corrs) {
    const Vec3 pc = pose.to_camera(c.world);
    if (!(pc.z() > 0.0)) {
      if (sq_sum) *sq_sum = std::numeric_limits<double>::infinity();
      return std::numeric_limits<double>::infinity();
    }
    const Vec2 px(in.cx + in.f * pc.x() / pc.z(), in.cy + in.f * pc.y() / pc.z());
    const double d2 = (c.image - px).squaredNorm();
    sq += d2;
    total += std::sqrt(d2);
  }
  if (sq_sum) *sq_sum = sq;
  return total;
}

// Hartley-normalising similarity for 2D points.
template <typename PointRange>
Mat3 normalizing_transform(const PointRange& pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double spread = 0.0;
  for (const auto& p : pts) spread += (p - mean).norm();
  spread /= static_cast<double>(pts.size());
  const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
  Mat3 T;
  T << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return T;
}

inline Mat3 fit_homography(const std::vector<Vec2>& src, const std::vector<Vec2>& dst) {
  const Mat3 Ts = normalizing_transform(src);
  const Mat3 Td = normalizing_transform(dst);
  const std::size_t n = src.size();
  Eigen::MatrixXd A(2 * n, 9);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec3 a = Ts * src[k].homogeneous();
    const Vec3 b = Td * dst[k].homogeneous();
    A.row(2 * k) << 0, 0, 0, -a.x(), -a.y(), -1, b.y() * a.x(), b.y() * a.y(), b.y();
    A.row(2 * k + 1) << a.x(), a.y(), 1, 0, 0, 0, -b.x() * a.x(), -b.x() * a.y(), -b.x();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Td.inverse() * H * Ts;
}

struct PlaneFrame {
  Vec3 origin;
  Mat3 axes;  // columns e1, e2, n (right-handed)
  double flatness;  // smallest / largest singular value of the centred points
};

inline PlaneFrame plane_frame(const std::vector<Correspondence>& corrs) {
  Vec3 c = Vec3::Zero();
  for (const auto& k : corrs) c += k.world;
  c /= static_cast<double>(corrs.size());
  Eigen::MatrixXd M(corrs.size(), 3);
  for (std::size_t k = 0; k < corrs.size(); ++k) M.row(k) = (corrs[k].world - c).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  PlaneFrame pf;
  pf.origin = c;
  pf.axes = svd.matrixV();
  if (pf.axes.determinant() < 0.0) pf.axes.col(2) *= -1.0;
  const auto sv = svd.singularValues();
  pf.flatness = sv(0) > 0.0 ? sv(2) / sv(0) : 0.0;
  return pf;
}

inline bool image_collinear(const std::vector<Correspondence>& corrs) {
  Vec2 c = Vec2::Zero();
  for (const auto& k : corrs) c += k.image;
  c /= static_cast<double>(corrs.size());
  Eigen::MatrixXd M(corrs.size(), 2);
  for (std::size_t k = 0; k < corrs.size(); ++k) M.row(k) = (corrs[k].image - c).transpose();
  const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
  return !(sv(0) > 0.0) || sv(1) / sv(0) < 1e-6;
}

// Pose from the plane-to-image homography for known intrinsics.
inline Pose pose_from_homography(const std::vector<Correspondence>& corrs, const PlaneFrame& pf,
                                 const Intrinsics& in) {
  std::vector<Vec2> src, dst;
  for (const auto& k : corrs) {
    const Vec3 local = pf.axes.transpose() * (k.world - pf.origin);
    src.emplace_back(local.x(), local.y());
    dst.push_back(k.image);
  }
  const Mat3 M = in.K_inverse() * fit_homography(src, dst);
  double lambda = 2.0 / (M.col(0).norm() + M.col(1).norm());
  if (lambda * M(2, 2) < 0.0) lambda = -lambda;
  const Vec3 r1 = lambda * M.col(0);
  const Vec3 r2 = lambda * M.col(1);
  Mat3 Rp;
  Rp.col(0) = r1;
  Rp.col(1) = r2;
  Rp.col(2) = r1.cross(r2);
  Pose pose;
  pose.R = orthonormalize(Rp) * pf.axes.transpose();
  pose.T = lambda * M.col(2) - pose.R * pf.origin;
  return pose;
}

// Pose from a DLT projection matrix for known intrinsics (>= 6 non-coplanar points).
inline Pose pose_from_dlt(const std::vector<Correspondence>& corrs, const Intrinsics& in) {
  const std::size_t n = corrs.size();
  std::vector<Vec2> img;
  for (const auto& k : corrs) img.push_back(k.image);
  const Mat3 Ti = normalizing_transform(img);
  Vec3 c = Vec3::Zero();
  for (const auto& k : corrs) c += k.world;
  c /= static_cast<double>(n);
  double spread = 0.0;
  for (const auto& k : corrs) spread += (k.world - c).norm();
  spread /= static_cast<double>(n);
  const double s = std::sqrt(3.0) / spread;
  Eigen::Matrix4d Tw = Eigen::Matrix4d::Identity();
  Tw.topLeftCorner<3, 3>() *= s;
  Tw.topRightCorner<3, 1>() = -s * c;

  Eigen::MatrixXd A(2 * n, 12);
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector4d X = Tw * corrs[k].world.homogeneous();
    const Vec3 x = Ti * corrs[k].image.homogeneous();
    A.row(2 * k) << Eigen::RowVector4d::Zero(), -x.z() * X.transpose(), x.y() * X.transpose();
    A.row(2 * k + 1) << x.z() * X.transpose(), Eigen::RowVector4d::Zero(), -x.x() * X.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Mat34 P;
  P << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
  P = Ti.inverse() * P * Tw;
  Mat34 M = in.K_inverse() * P;
  double scale = std::cbrt(M.leftCols<3>().determinant());
  M /= scale;
  Pose pose;
  pose.R = orthonormalize(M.leftCols<3>());
  pose.T = M.col(3);
  return pose;
}

// Levenberg-Marquardt on (rotation increment, translation) at fixed intrinsics.
inline PnPResult refine_pose(const std::vector<Correspondence>& corrs, const Intrinsics& in, Pose pose) {
  const std::size_t n = corrs.size();
  double cost = 0.0;
  detail::summed_error(corrs, in, pose, &cost);
  if (!std::isfinite(cost)) throw Error(Errc::DegenerateConfiguration, "initial pose puts points behind the camera");
  double mu = 1e-3;
  int it = 0;
  constexpr int kMaxIters = 200;
  bool done = false;
  for (; it < kMaxIters && !done; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 rx = pose.R * corrs[k].world;
      const Vec3 pc = rx + pose.T;
      const double iz = 1.0 / pc.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << in.f * iz, 0.0, -in.f * pc.x() * iz * iz, 0.0, in.f * iz, -in.f * pc.y() * iz * iz;
      Eigen::Matrix<double, 2, 6> J;
      J.leftCols<3>() = -dproj * skew(rx);
      J.rightCols<3>() = dproj;
      const Vec2 r = corrs[k].image - Vec2(in.cx + in.f * pc.x() * iz, in.cy + in.f * pc.y() * iz);
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    if (g.norm() < 1e-14 * std::max(1.0, cost)) break;
    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix<double, 6, 6> Hd = H;
      for (int d = 0; d < 6; ++d) Hd(d, d) += mu * std::max(H(d, d), 1e-12);
      const Eigen::Matrix<double, 6, 1> delta = Hd.ldlt().solve(g);
      Pose trial;
      trial.R = rotation_exp(delta.head<3>()) * pose.R;
      trial.T = pose.T + delta.tail<3>();
      double trial_cost = 0.0;
      detail::summed_error(corrs, in, trial, &trial_cost);
      if (trial_cost < cost) {
        const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
        pose = trial;
        cost = trial_cost;
        mu = std::max(mu / 5.0, 1e-12);
        accepted = true;
        if (rel < 1e-14 || delta.norm() < 1e-14 || cost < 1e-24) done = true;
      } else {
        mu *= 8.0;
        if (mu > 1e12) {
          done = true;  // no descent direction left: local minimum
          break;
        }
      }
    }
  }
  if (!done && it >= kMaxIters) throw Error(Errc::NoConvergence, "pose refinement hit the iteration cap");
  PnPResult res;
  res.pose = pose;
  res.iterations = it;
  double sq = 0.0;
  res.total_error = detail::summed_error(corrs, in, pose, &sq);
  res.rmse = std::sqrt(sq / static_cast<double>(n));
  return res;
}

}  // namespace detail

/// Pose minimising squared reprojection error at a fixed focal length.
inline PnPResult solve_pnp_fixed_f(const std::vector<Correspondence>& corrs, const Intrinsics& intrinsics,
                                   const std::optional<Pose>& init = std::nullopt) {
  if (corrs.size() < 4) throw Error(Errc::TooFewPoints, "PnP needs at least 4 correspondences");
  if (detail::image_collinear(corrs)) throw Error(Errc::DegenerateConfiguration, "image points are collinear");

  std::vector<Pose> starts;
  if (init) starts.push_back(*init);
  const auto pf = detail::plane_frame(corrs);
  if (pf.flatness < 1e-6) {
    starts.push_back(detail::pose_from_homography(corrs, pf, intrinsics));
  } else if (corrs.size() >= 6) {
    starts.push_back(detail::pose_from_dlt(corrs, intrinsics));
  } else if (!init) {
    throw Error(Errc::DegenerateConfiguration, "non-coplanar sets need >= 6 points or an initial pose");
  }

  std::optional<PnPResult> best;
  std::optional<Error> last_error;
  for (const auto& s : starts) {
    try {
      auto r = detail::refine_pose(corrs, intrinsics, s);
      if (!best || r.rmse < best->rmse) best = r;
    } catch (const Error& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  return *best;
}

inline bool plausible_camera(const CalibratedCamera& cam, double max_distance) {
  const Vec3 c = cam.center();
  return c.norm() < max_distance && c.z() > 0.0;
}

struct FocalEstimate {
  CalibratedCamera camera;
  double total_error = 0.0;           // E(f*) in px
  std::vector<double> error_history;  // E after each outer iteration, starting with E(f0)
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct ProfilePoint {
  double f = 0.0;
  double error = std::numeric_limits<double>::infinity();
  Pose pose;
};

inline ProfilePoint profile_at(const std::vector<Correspondence>& corrs, ImageSize size, double f,
                               const std::optional<Pose>& warm) {
  ProfilePoint p;
  p.f = f;
  try {
    const auto res = solve_pnp_fixed_f(corrs, Intrinsics::centered(f, size), warm);
    p.error = res.total_error;
    p.pose = res.pose;
  } catch (const Error&) {
  }
  return p;
}

inline ProfilePoint golden_section(const std::vector<Correspondence>& corrs, ImageSize size, double a, double b,
                                   const std::optional<Pose>& warm) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  ProfilePoint x1 = profile_at(corrs, size, b - phi * (b - a), warm);
  ProfilePoint x2 = profile_at(corrs, size, a + phi * (b - a), warm);
  while ((b - a) > 1e-9 * b) {
    if (x1.error < x2.error) {
      b = x2.f;
      x2 = x1;
      x1 = profile_at(corrs, size, b - phi * (b - a), x2.pose);
    } else {
      a = x1.f;
      x1 = x2;
      x2 = profile_at(corrs, size, a + phi * (b - a), x1.pose);
    }
  }
  return x1.error < x2.error ? x1 : x2;
}

}  // namespace detail

/// Alternates fixed-f PnP with a line search on f until the summed
/// reprojection error stops changing. The first line search scans the whole
/// [f_min, f_max] range; later ones refine around the current estimate.
inline FocalEstimate estimate_focal(const std::vector<Correspondence>& corrs, ImageSize size,
                                    const CalibConfig& cfg = {}) {
  cfg.validate();
  if (corrs.size() < 4) throw Error(Errc::TooFewPoints, "need at least 4 correspondences");

  FocalEstimate out;
  detail::ProfilePoint current = detail::profile_at(corrs, size, cfg.f0, std::nullopt);
  out.error_history.push_back(current.error);

  for (int k = 0; k < cfg.max_iters; ++k) {
    detail::ProfilePoint candidate;
    if (k == 0) {
      constexpr int kGrid = 48;
      std::vector<detail::ProfilePoint> grid;
      const double ratio = std::log(cfg.f_max / cfg.f_min);
      for (int g = 0; g <= kGrid; ++g) {
        grid.push_back(detail::profile_at(corrs, size, cfg.f_min * std::exp(ratio * g / kGrid), std::nullopt));
      }
      const auto it = std::min_element(grid.begin(), grid.end(),
                                       [](const auto& a, const auto& b) { return a.error < b.error; });
      const auto idx = static_cast<std::size_t>(it - grid.begin());
      const double lo = grid[idx == 0 ? 0 : idx - 1].f;
      const double hi = grid[std::min(idx + 1, grid.size() - 1)].f;
      candidate = detail::golden_section(corrs, size, lo, hi, it->pose);
      if (it->error < candidate.error) candidate = *it;
    } else {
      const double lo = std::max(cfg.f_min, current.f / 1.02);
      const double hi = std::min(cfg.f_max, current.f * 1.02);
      candidate = detail::golden_section(corrs, size, lo, hi, current.pose);
    }
    // re-solve the pose at the new focal length from the previous pose
    if (std::isfinite(candidate.error)) {
      auto warm = detail::profile_at(corrs, size, candidate.f, current.pose);
      if (warm.error < candidate.error) candidate = warm;
    }
    ++out.iterations;
    const double prev = current.error;
    if (candidate.error < current.error) current = candidate;
    out.error_history.push_back(current.error);
    if (std::isfinite(prev) && std::abs(prev - current.error) < cfg.epsilon) {
      out.converged = true;
      break;
    }
  }
  if (!std::isfinite(current.error)) throw Error(Errc::NoConvergence, "no focal length produced a valid pose");

  out.camera.intrinsics = Intrinsics::centered(current.f, size);
  out.camera.pose = current.pose;
  double sq = 0.0;
  out.total_error = detail::summed_error(corrs, out.camera.intrinsics, current.pose, &sq);
  out.camera.reprojection_rmse = std::sqrt(sq / static_cast<double>(corrs.size()));
  if (!out.converged && out.iterations >= cfg.max_iters) {
    throw Error(Errc::NoConvergence, "focal search hit the iteration cap");
  }
  if (!plausible_camera(out.camera, cfg.max_camera_distance)) {
    throw Error(Errc::ImplausiblePose, "camera centre at distance " + std::to_string(out.camera.center().norm()) +
                                           " m, height " + std::to_string(out.camera.center().z()) + " m");
  }
  return out;
}

/// Table-feature correspondences for the detected keypoints of one frame.
inline std::vector<Correspondence> table_correspondences(const TableModel& table, const std::array<Vec2, 4>& corners,
                                                         const std::optional<std::array<Vec2, 2>>& midline = {}) {
  std::vector<Correspondence> out;
  const auto w = table.corners();
  for (int i = 0; i < 4; ++i) out.push_back({w[i], corners[i], static_cast<FeatureLabel>(i)});
  if (midline) {
    const auto m = table.midline();
    out.push_back({m[0], (*midline)[0], FeatureLabel::MidlineFront});
    out.push_back({m[1], (*midline)[1], FeatureLabel::MidlineBack});
  }
  return out;
}

struct OrderedCalibration {
  std::vector<Correspondence> ordered;  // Corner0..Corner3
  FocalEstimate estimate;
  bool ambiguous = false;
  double runner_up_error = std::numeric_limits<double>::infinity();
};

/// Rotates the labelling by half a turn about the table's vertical axis,
/// the one symmetry four corners cannot resolve.
inline OrderedCalibration flip_half_turn(OrderedCalibration c, const TableModel& table) {
  Mat3 half_turn = Mat3::Identity();
  half_turn(0, 0) = -1.0;
  half_turn(1, 1) = -1.0;
  const auto w = table.corners();
  std::vector<Correspondence> flipped(4);
  for (int i = 0; i < 4; ++i) {
    const int j = (i + 2) % 4;
    flipped[j] = {w[j], c.ordered[i].image, static_cast<FeatureLabel>(j)};
  }
  c.ordered = flipped;
  c.estimate.camera.pose.R = c.estimate.camera.pose.R * half_turn;
  return c;
}

/// Tries every cyclic labelling (both winding directions) of four unlabelled
/// corners and keeps the lowest-error plausible calibration. The result is
/// canonicalised so that the camera sits on the -Y half of the table.
inline OrderedCalibration disambiguate_corners(const std::array<Vec2, 4>& corners, const TableModel& table,
                                               ImageSize size, const CalibConfig& cfg = {}) {
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if ((corners[i] - corners[j]).norm() < 1e-6) throw Error(Errc::InvalidArgument, "corner points must be distinct");
    }
  }
  Vec2 c = Vec2::Zero();
  for (const auto& p : corners) c += p;
  c /= 4.0;
  std::array<int, 4> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::atan2(corners[a].y() - c.y(), corners[a].x() - c.x()) <
           std::atan2(corners[b].y() - c.y(), corners[b].x() - c.x());
  });

  struct Candidate {
    OrderedCalibration calib;
    int klass;  // labellings related by the half-turn share a class
  };
  std::vector<Candidate> candidates;
  const auto w = table.corners();
  for (int dir : {1, -1}) {
    for (int shift = 0; shift < 4; ++shift) {
      std::vector<Correspondence> corrs;
      for (int i = 0; i < 4; ++i) {
        const int src = order[((shift + dir * i) % 4 + 4) % 4];
        corrs.push_back({w[i], corners[src], static_cast<FeatureLabel>(i)});
      }
      try {
        OrderedCalibration oc;
        oc.estimate = estimate_focal(corrs, size, cfg);
        oc.ordered = corrs;
        candidates.push_back({oc, (dir > 0 ? 0 : 2) + shift % 2});
      } catch (const Error&) {
      }
    }
  }
  if (candidates.empty()) throw Error(Errc::NoPlausibleOrdering, "no corner labelling gave a plausible camera");
  const auto best = std::min_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return a.calib.estimate.total_error < b.calib.estimate.total_error;
  });
  OrderedCalibration out = best->calib;
  for (const auto& cand : candidates) {
    if (cand.klass != best->klass) out.runner_up_error = std::min(out.runner_up_error, cand.calib.estimate.total_error);
  }
  const double margin = std::max(1.0, 0.1 * out.estimate.total_error);
  out.ambiguous = out.runner_up_error - out.estimate.total_error < margin;

  const Vec3 center = out.estimate.camera.center();
  if (center.y() > 0.0 || (std::abs(center.y()) < 1e-9 && center.x() < 0.0)) out = flip_half_turn(out, table);
  return out;
}

// ---------------------------------------------------------------------------
// Temporal filtering

struct TrackerConfig {
  double nominal_dt = 1.0 / 25.0;
  // process noise, one standard deviation per nominal frame
  double process_f_rel = 0.005;
  double process_rot_deg = 0.5;
  double process_T = 0.02;  // m
  // measurement noise, one standard deviation
  double meas_f_rel = 0.05;
  double meas_rot_deg = 1.5;
  double meas_T = 0.15;  // m
  double gate_chi2 = 24.32;  // chi-square, 7 dof, p = 0.999
  int max_consecutive_rejections = 5;
};

struct TrackedCamera {
  double t = 0.0;
  CalibratedCamera camera;
  bool measured = false;  // a measurement was available for this frame
  bool accepted = false;  // and it passed the innovation gate
};

/// Constant-position Kalman filter over [f, rotation, T]. Rotation lives on
/// the manifold: the state keeps a matrix and the filter works on 3-vector
/// increments composed on the left.
class CameraTracker {
 public:
  using Vec7 = Eigen::Matrix<double, 7, 1>;
  using Mat7 = Eigen::Matrix<double, 7, 7>;

  explicit CameraTracker(TrackerConfig cfg = {}) : cfg_(cfg) {}

  bool initialized() const { return initialized_; }
  const Mat7& covariance() const { return P_; }

  TrackedCamera update(double t, const std::optional<CalibratedCamera>& measurement) {
    if (initialized_ && !(t > t_)) throw Error(Errc::InvalidArgument, "timestamps must increase");
    TrackedCamera out;
    out.t = t;
    out.measured = measurement.has_value();
    if (!initialized_) {
      if (!measurement) throw Error(Errc::EmptyStream, "no measurement to initialise the tracker");
      state_ = *measurement;
      P_ = measurement_noise(measurement->intrinsics.f);
      t_ = t;
      initialized_ = true;
      out.camera = state_;
      out.accepted = true;
      return out;
    }

    const double steps = (t - t_) / cfg_.nominal_dt;
    P_ += process_noise(state_.intrinsics.f) * steps;
    t_ = t;

    if (measurement) {
      Vec7 y;
      y(0) = measurement->intrinsics.f - state_.intrinsics.f;
      y.segment<3>(1) = rotation_log(measurement->pose.R * state_.pose.R.transpose());
      y.segment<3>(4) = measurement->pose.T - state_.pose.T;
      const Mat7 S = P_ + measurement_noise(state_.intrinsics.f);
      const double nis = y.dot(S.ldlt().solve(y));
      if (nis <= cfg_.gate_chi2 || rejections_ >= cfg_.max_consecutive_rejections) {
        if (nis > cfg_.gate_chi2) {
          // persistent disagreement: the camera really moved, restart from the measurement
          state_ = *measurement;
          P_ = measurement_noise(measurement->intrinsics.f);
        } else {
          const Mat7 K = P_ * S.inverse();
          const Vec7 dx = K * y;
          state_.intrinsics.f += dx(0);
          state_.pose.R = rotation_exp(dx.segment<3>(1)) * state_.pose.R;
          state_.pose.T += dx.segment<3>(4);
          state_.reprojection_rmse = measurement->reprojection_rmse;
          P_ = (Mat7::Identity() - K) * P_;
          P_ = 0.5 * (P_ + P_.transpose());
        }
        rejections_ = 0;
        out.accepted = true;
      } else {
        ++rejections_;
      }
      state_.intrinsics = Intrinsics::centered(state_.intrinsics.f, measurement->intrinsics.width,
                                               measurement->intrinsics.height);
    }
    out.camera = state_;
    return out;
  }

 private:
  Mat7 process_noise(double f) const {
    Vec7 d;
    const double rot = cfg_.process_rot_deg * M_PI / 180.0;
    d << std::pow(cfg_.process_f_rel * f, 2), rot * rot, rot * rot, rot * rot, std::pow(cfg_.process_T, 2),
        std::pow(cfg_.process_T, 2), std::pow(cfg_.process_T, 2);
    return d.asDiagonal();
  }
  Mat7 measurement_noise(double f) const {
    Vec7 d;
    const double rot = cfg_.meas_rot_deg * M_PI / 180.0;
    d << std::pow(cfg_.meas_f_rel * f, 2), rot * rot, rot * rot, rot * rot, std::pow(cfg_.meas_T, 2),
        std::pow(cfg_.meas_T, 2), std::pow(cfg_.meas_T, 2);
    return d.asDiagonal();
  }

  TrackerConfig cfg_;
  bool initialized_ = false;
  double t_ = 0.0;
  CalibratedCamera state_;
  Mat7 P_ = Mat7::Identity();
  int rejections_ = 0;
};

struct TimedCalibration {
  double t = 0.0;
  std::optional<CalibratedCamera> camera;  // empty: calibration failed for this frame
};

/// Filters a per-frame calibration stream. Frames before the first valid
/// measurement produce no output.
inline std::vector<TrackedCamera> track_camera(const std::vector<TimedCalibration>& frames,
                                               const TrackerConfig& cfg = {}) {
  CameraTracker tracker(cfg);
  std::vector<TrackedCamera> out;
  for (const auto& fr : frames) {
    if (!tracker.initialized() && !fr.camera) continue;
    out.push_back(tracker.update(fr.t, fr.camera));
  }
  if (out.empty()) throw Error(Errc::EmptyStream, "no valid calibration in the stream");
  return out;
}

}  // namespace tt3d
