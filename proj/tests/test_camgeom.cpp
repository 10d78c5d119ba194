#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tt3d/camgeom.hpp"

using namespace tt3d;

namespace {

CalibratedCamera axis_camera() {
  CalibratedCamera cam;
  cam.intrinsics = Intrinsics::centered(1000.0, 1280, 720);
  cam.pose.R = Mat3::Identity();
  cam.pose.T = Vec3(0.0, 0.0, 5.0);
  return cam;
}

// Independent route: 4x4 homogeneous world-to-camera matrix, then K.
Vec2 homogeneous_project(const CalibratedCamera& cam, const Vec3& X) {
  Eigen::Matrix4d E = Eigen::Matrix4d::Identity();
  E.topLeftCorner<3, 3>() = cam.pose.R;
  E.topRightCorner<3, 1>() = cam.pose.T;
  const Eigen::Vector4d Xc = E * Eigen::Vector4d(X.x(), X.y(), X.z(), 1.0);
  Eigen::Matrix<double, 3, 4> K0 = Eigen::Matrix<double, 3, 4>::Zero();
  K0.leftCols<3>() = cam.intrinsics.K();
  const Vec3 x = K0 * Xc;
  return x.hnormalized();
}

}  // namespace

TEST(Project, OpticalAxisPointMapsToPrincipalPoint) {
  const Vec2 px = project(axis_camera(), Vec3(0.0, 0.0, 0.0));
  EXPECT_DOUBLE_EQ(px.x(), 640.0);
  EXPECT_DOUBLE_EQ(px.y(), 360.0);
}

TEST(Project, LateralOffset) {
  const Vec2 px = project(axis_camera(), Vec3(0.5, 0.0, 0.0));
  EXPECT_NEAR(px.x(), 740.0, 1e-12);
  EXPECT_NEAR(px.y(), 360.0, 1e-12);
}

TEST(Project, BehindCameraThrows) {
  EXPECT_TT3D_ERROR(project(axis_camera(), Vec3(0.0, 0.0, -6.0)), Errc::PointBehindCamera);
  EXPECT_TT3D_ERROR(project(axis_camera(), Vec3(0.0, 0.0, -5.0)), Errc::PointBehindCamera);
}

TEST(Project, MatchesHomogeneousOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cam = testutil::random_table_camera(rng);
    const Vec3 X(U(rng), 1.4 * U(rng), 0.5 + 0.5 * U(rng));
    const Vec2 a = project(cam, X);
    const Vec2 b = homogeneous_project(cam, X);
    EXPECT_LT((a - b).norm(), 1e-9);
    // the 3x4 projection matrix agrees too
    EXPECT_LT((cam.projection_matrix() * X.homogeneous()).hnormalized().operator-(a).norm(), 1e-9);
  }
}

TEST(PixelRay, PrincipalRay) {
  const Ray ray = pixel_ray(axis_camera(), 640.0, 360.0);
  EXPECT_LT((ray.origin - Vec3(0.0, 0.0, -5.0)).norm(), 1e-15);
  EXPECT_LT((ray.direction - Vec3(0.0, 0.0, 1.0)).norm(), 1e-15);
}

TEST(PixelRay, ProjectThenBackProjectPassesThroughPoint) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cam = testutil::random_table_camera(rng);
    const Vec3 X(U(rng), 1.4 * U(rng), 0.6 * (U(rng) + 1.0));
    const Ray ray = pixel_ray(cam, project(cam, X));
    EXPECT_NEAR(ray.direction.norm(), 1.0, 1e-12);
    const double s = (X - ray.origin).dot(ray.direction);
    const double miss = (ray.at(s) - X).norm();
    EXPECT_LT(miss, 1e-9);
    EXPECT_LT(miss, 1e-6 * s);
  }
}

TEST(PixelRay, RandomPixelsRoundTrip) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto cam = testutil::random_table_camera(rng);
  for (int k = 0; k < 100; ++k) {
    const Vec2 px(1920.0 * U(rng), 1080.0 * U(rng));
    const Ray ray = pixel_ray(cam, px);
    const double depth = 1.0 + 10.0 * U(rng);
    EXPECT_LT((project(cam, ray.at(depth)) - px).norm(), 1e-6);
  }
}

TEST(IntersectRayPlane, VerticalRayOnTable) {
  const Vec3 x = intersect_ray_plane(Ray{Vec3(0, 0, 1), Vec3(0, 0, -1)}, Vec3::UnitZ(), Vec3::Zero());
  EXPECT_LT(x.norm(), 1e-15);
}

TEST(IntersectRayPlane, RadiusOffsetPlane) {
  const Vec3 x =
      intersect_ray_plane(Ray{Vec3(1, 1, 2), Vec3(0, 0, -1).normalized()}, Vec3::UnitZ(), Vec3(0, 0, 0.02));
  EXPECT_LT((x - Vec3(1, 1, 0.02)).norm(), 1e-15);
}

TEST(IntersectRayPlane, ParallelRayThrows) {
  EXPECT_TT3D_ERROR(intersect_ray_plane(Ray{Vec3(0, 0, 1), Vec3(1, 0, 0)}, Vec3::UnitZ(), Vec3::Zero()),
                    Errc::RayParallelToPlane);
}

TEST(IntersectRayPlane, RandomResidualOnPlane) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-5.0, 5.0);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Ray ray{Vec3(U(rng), U(rng), U(rng)), testutil::random_unit(rng)};
    const Vec3 n = testutil::random_unit(rng);
    const Vec3 p0(U(rng), U(rng), U(rng));
    if (std::abs(ray.direction.dot(n)) < 0.05) continue;
    const Vec3 x = intersect_ray_plane(ray, n, p0);
    EXPECT_LT(std::abs((x - p0).dot(n)), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 800);
}

TEST(Projection, PoseIsIdentifiableFromGenericPoints) {
  // perturbing the pose of a generic 6-point set always moves some projection
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const auto cam = testutil::random_table_camera(rng);
  std::vector<Vec3> pts;
  for (int k = 0; k < 6; ++k) pts.emplace_back(U(rng), 1.3 * U(rng), 0.4 * (U(rng) + 1.0));
  for (int trial = 0; trial < 50; ++trial) {
    CalibratedCamera moved = cam;
    moved.pose.R = rotation_exp(1e-3 * testutil::random_unit(rng)) * cam.pose.R;
    moved.pose.T += 1e-3 * testutil::random_unit(rng);
    double change = 0.0;
    for (const auto& X : pts) change = std::max(change, (project(moved, X) - project(cam, X)).norm());
    EXPECT_GT(change, 1e-3);
  }
}

TEST(TableModel, CornersOnPlane) {
  const auto table = TableModel::standard();
  for (const auto& c : table.corners()) EXPECT_LT(std::abs(table.plane().signed_distance(c)), 1e-12);
  EXPECT_DOUBLE_EQ(table.corners()[2].x() - table.corners()[0].x(), 1.525);
  EXPECT_DOUBLE_EQ(table.corners()[2].y() - table.corners()[0].y(), 2.74);
  EXPECT_NEAR(table.plane().normal.norm(), 1.0, 1e-15);
}

TEST(Rotation, ExpLogRoundTrip) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> U(0.0, 3.0);
  for (int k = 0; k < 100; ++k) {
    const Vec3 w = U(rng) * testutil::random_unit(rng);
    const Mat3 R = rotation_exp(w);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
    EXPECT_LT((rotation_log(R) - w).norm(), 1e-9);
  }
}

TEST(LookAt, TargetProjectsToPrincipalPoint) {
  CalibratedCamera cam;
  cam.intrinsics = Intrinsics::centered(1800.0, 1280, 720);
  cam.pose = look_at(Vec3(6.0, 0.5, 2.5), Vec3(0.0, 0.0, 0.1));
  EXPECT_LT((project(cam, Vec3(0.0, 0.0, 0.1)) - Vec2(640, 360)).norm(), 1e-9);
  EXPECT_NEAR(cam.pose.R.determinant(), 1.0, 1e-12);
  // world up appears as image up (decreasing v)
  EXPECT_LT(project(cam, Vec3(0.0, 0.0, 0.5)).y(), 360.0);
}
