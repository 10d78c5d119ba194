#pragma once

// Pinhole camera geometry and the table's world model.
//
// World frame: origin at the centre of the playing surface, X across the
// table, Y along its length, Z up. Camera frame: x right, y down, z forward.

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "tt3d/error.hpp"

namespace tt3d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

struct ImageSize {
  int width = 1280;
  int height = 720;

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width && px.y() < height;
  }
};

/// Square pixels, principal point at the image centre, no distortion.
struct Intrinsics {
  double f = 1500.0;
  int width = 1280;
  int height = 720;
  double cx = 640.0;
  double cy = 360.0;

  static Intrinsics centered(double f, int width, int height) {
    return Intrinsics{f, width, height, 0.5 * width, 0.5 * height};
  }
  static Intrinsics centered(double f, ImageSize size) { return centered(f, size.width, size.height); }

  ImageSize image_size() const { return {width, height}; }

  Mat3 K() const {
    Mat3 k;
    k << f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0;
    return k;
  }

  Mat3 K_inverse() const {
    Mat3 k;
    k << 1.0 / f, 0.0, -cx / f, 0.0, 1.0 / f, -cy / f, 0.0, 0.0, 1.0;
    return k;
  }
};

/// World-to-camera transform: X_cam = R * X_world + T.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 T = Vec3::Zero();

  Vec3 center() const { return -R.transpose() * T; }
  Vec3 to_camera(const Vec3& world) const { return R * world + T; }
};

struct CalibratedCamera {
  Intrinsics intrinsics;
  Pose pose;
  double reprojection_rmse = 0.0;

  Mat34 projection_matrix() const {
    Mat34 rt;
    rt.leftCols<3>() = pose.R;
    rt.col(3) = pose.T;
    return intrinsics.K() * rt;
  }

  Vec3 center() const { return pose.center(); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double s) const { return origin + s * direction; }
};

struct Plane {
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();

  double signed_distance(const Vec3& x) const { return (x - point).dot(normal); }
  Plane offset(double d) const { return Plane{normal, point + d * normal}; }
};

enum class FeatureLabel { Corner0, Corner1, Corner2, Corner3, MidlineFront, MidlineBack, Other };

/// ITTF table: 2.74 m x 1.525 m, playing surface 0.76 m above the floor.
struct TableModel {
  double length = 2.74;
  double width = 1.525;
  double height = 0.76;

  static TableModel standard() { return TableModel{}; }

  /// Counter-clockwise seen from above, starting at the (-X, -Y) corner.
  std::array<Vec3, 4> corners() const {
    const double hx = 0.5 * width;
    const double hy = 0.5 * length;
    return {Vec3(-hx, -hy, 0.0), Vec3(hx, -hy, 0.0), Vec3(hx, hy, 0.0), Vec3(-hx, hy, 0.0)};
  }

  /// Centre line meets the near (-Y) and far (+Y) end lines.
  std::array<Vec3, 2> midline() const {
    const double hy = 0.5 * length;
    return {Vec3(0.0, -hy, 0.0), Vec3(0.0, hy, 0.0)};
  }

  Vec3 feature(FeatureLabel label) const {
    switch (label) {
      case FeatureLabel::Corner0: return corners()[0];
      case FeatureLabel::Corner1: return corners()[1];
      case FeatureLabel::Corner2: return corners()[2];
      case FeatureLabel::Corner3: return corners()[3];
      case FeatureLabel::MidlineFront: return midline()[0];
      case FeatureLabel::MidlineBack: return midline()[1];
      case FeatureLabel::Other: break;
    }
    throw Error(Errc::InvalidArgument, "label has no table feature");
  }

  Plane plane() const { return Plane{Vec3::UnitZ(), Vec3::Zero()}; }

  bool contains_xy(const Vec3& p, double margin = 0.0) const {
    return std::abs(p.x()) <= 0.5 * width + margin && std::abs(p.y()) <= 0.5 * length + margin;
  }
};

inline Vec2 project(const CalibratedCamera& cam, const Vec3& world) {
  const Vec3 pc = cam.pose.to_camera(world);
  if (!(pc.z() > 0.0)) {
    throw Error(Errc::PointBehindCamera, "depth " + std::to_string(pc.z()));
  }
  const auto& in = cam.intrinsics;
  return Vec2(in.cx + in.f * pc.x() / pc.z(), in.cy + in.f * pc.y() / pc.z());
}

/// Back-projected ray in the world frame.
inline Ray pixel_ray(const CalibratedCamera& cam, double u, double v) {
  const Vec3 d_cam = cam.intrinsics.K_inverse() * Vec3(u, v, 1.0);
  return Ray{cam.center(), (cam.pose.R.transpose() * d_cam).normalized()};
}

inline Ray pixel_ray(const CalibratedCamera& cam, const Vec2& px) { return pixel_ray(cam, px.x(), px.y()); }

inline Vec3 intersect_ray_plane(const Ray& ray, const Vec3& normal, const Vec3& plane_point) {
  const double denom = ray.direction.dot(normal);
  if (std::abs(denom) <= 1e-9) {
    throw Error(Errc::RayParallelToPlane, "ray direction is parallel to the plane");
  }
  const double s = (plane_point - ray.origin).dot(normal) / denom;
  Vec3 x = ray.at(s);
  // snap the rounding residual back onto the plane
  x -= (x - plane_point).dot(normal) * normal;
  return x;
}

inline Vec3 intersect_ray_plane(const Ray& ray, const Plane& plane) {
  return intersect_ray_plane(ray, plane.normal, plane.point);
}

// Rotation helpers on SO(3), vector = axis * angle.

inline Mat3 rotation_exp(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-15) {
    Mat3 wx;
    wx << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return Mat3::Identity() + wx;
  }
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

inline Vec3 rotation_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return rotation_log(a * b.transpose()).norm();
}

/// Nearest rotation in Frobenius norm.
inline Mat3 orthonormalize(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  return R;
}

inline Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

/// Camera at `eye` looking at `target`, image "up" roughly along world +Z.
inline Pose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  Pose pose;
  pose.R.row(0) = x.transpose();
  pose.R.row(1) = y.transpose();
  pose.R.row(2) = z.transpose();
  pose.T = -pose.R * eye;
  return pose;
}

}  // namespace tt3d
