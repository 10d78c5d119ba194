#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "seg_oracle.hpp"
#include "test_util.hpp"
#include "tt3d/physics.hpp"
#include "tt3d/rallyseg.hpp"

using namespace tt3d;

namespace {

RallyTrack sample_track(const std::function<Vec2(double)>& curve, double t0, int n, double dt, int frame0 = 0) {
  RallyTrack track;
  for (int k = 0; k < n; ++k) {
    const double t = t0 + k * dt;
    const Vec2 p = curve(t);
    track.push_back(Detection{frame0 + k, t, p.x(), p.y(), std::nullopt, std::nullopt});
  }
  return track;
}

// Two image-space parabolas meeting after n_first frames with a change of direction.
RallyTrack two_arcs(int n_first, int n_second, double noise, std::mt19937_64& rng, bool with_blur = false,
                    Vec2 join_velocity = Vec2(380.0, -450.0)) {
  const double dt = 0.04;
  const double tj = n_first * dt;
  auto first = [](double t) { return Vec2(200.0 + 400.0 * t, 300.0 - 500.0 * t + 400.0 * t * t); };
  const Vec2 pj = first(tj);
  auto second = [&](double t) {
    const double s = t - tj;
    return Vec2(pj.x() + join_velocity.x() * s, pj.y() + join_velocity.y() * s + 400.0 * s * s);
  };
  auto d_first = [](double t) { return Vec2(400.0, -500.0 + 800.0 * t); };
  auto d_second = [&](double t) { return Vec2(join_velocity.x(), join_velocity.y() + 800.0 * (t - tj)); };
  std::normal_distribution<double> N(0.0, 1.0);
  RallyTrack track;
  for (int k = 0; k < n_first + n_second; ++k) {
    const double t = k * dt + 0.5 * dt;
    const bool in_first = t < tj;
    const Vec2 p = in_first ? first(t) : second(t);
    const Vec2 d = in_first ? d_first(t) : d_second(t);
    Detection det{k, t, p.x() + noise * N(rng), p.y() + noise * N(rng), std::nullopt, std::nullopt};
    if (with_blur) det.blur_angle = std::atan2(d.y(), d.x());
    track.push_back(det);
  }
  return track;
}

Segment exact_segment(const std::function<Vec2(double)>& curve, double t0, double t1) {
  const auto track = sample_track(curve, t0, 10, (t1 - t0) / 9.0);
  return fit_segment(track, 0, track.size() - 1);
}

std::vector<std::size_t> starts_of(const std::vector<Segment>& segs) {
  std::vector<std::size_t> s;
  for (const auto& seg : segs) s.push_back(seg.start_idx);
  return s;
}

}  // namespace

TEST(FitSegment, ExactParabola) {
  const auto track = sample_track([](double t) { return Vec2(t * t, 2.0 * t); }, 0.0, 5, 0.5);
  const auto seg = fit_segment(track, 0, 4);
  EXPECT_NEAR(seg.fit_cost, 0.0, 1e-9);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(seg.coeff_u[k], k == 2 ? 1.0 : 0.0, 1e-9);
    EXPECT_NEAR(seg.coeff_v[k], k == 1 ? 2.0 : 0.0, 1e-9);
  }
}

TEST(FitSegment, ThreePointsInterpolate) {
  const auto track = sample_track([](double t) { return Vec2(100.0 + 3.0 * t, 50.0 - 7.0 * t * t); }, 2.0, 3, 0.04);
  const auto seg = fit_segment(track, 0, 2);
  EXPECT_NEAR(seg.fit_cost, 0.0, 1e-9);
  for (const auto& d : track) EXPECT_LT((seg.eval(d.t) - d.px()).norm(), 1e-9);
}

TEST(FitSegment, NoisyParabolaRecovered) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0.0, 2.0);
  auto truth = [](double t) { return Vec2(300.0 + 500.0 * t - 100.0 * t * t, 400.0 - 300.0 * t + 450.0 * t * t); };
  RallyTrack track = sample_track(truth, 0.0, 20, 0.04);
  for (auto& d : track) {
    d.u += N(rng);
    d.v += N(rng);
  }
  const auto seg = fit_segment(track, 0, 19);
  double sq = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double t = 0.76 * k / 100.0;
    sq += (seg.eval(t) - truth(t)).squaredNorm();
  }
  EXPECT_LT(std::sqrt(sq / 101.0), 3.0);
}

TEST(FitSegment, TooFewPoints) {
  const auto track = sample_track([](double t) { return Vec2(t, t); }, 0.0, 5, 0.1);
  EXPECT_TT3D_ERROR(fit_segment(track, 1, 2), Errc::TooFewPoints);
}

TEST(FitSegment, RobustToSingleGlitch) {
  auto truth = [](double t) { return Vec2(300.0 + 500.0 * t, 400.0 - 300.0 * t + 450.0 * t * t); };
  RallyTrack track = sample_track(truth, 0.0, 15, 0.04);
  track[7].u += 80.0;
  const auto seg = fit_segment(track, 0, 14);
  EXPECT_LT((seg.eval(track[3].t) - truth(track[3].t)).norm(), 2.0);
}

TEST(BlurResidual, AxialDistance) {
  const auto track = sample_track([](double t) { return Vec2(100.0 + 200.0 * t, 300.0 + 200.0 * t); }, 0.0, 6, 0.04);
  const auto seg = fit_segment(track, 0, 5);
  Detection d = track[2];
  d.blur_angle = M_PI / 4.0;
  EXPECT_NEAR(blur_residual(seg, d), 0.0, 1e-9);
  d.blur_angle = M_PI / 4.0 + M_PI;
  EXPECT_NEAR(blur_residual(seg, d), 0.0, 1e-9);
  d.blur_angle = M_PI / 4.0 - 0.1;
  EXPECT_NEAR(blur_residual(seg, d), 0.1, 1e-9);
  d.blur_angle = M_PI / 4.0 - M_PI + 0.1;
  EXPECT_NEAR(blur_residual(seg, d), 0.1, 1e-9);
  d.blur_angle.reset();
  EXPECT_TT3D_ERROR(blur_residual(seg, d), Errc::NoBlurData);
}

TEST(SegmentRally, SingleCleanParabola) {
  const auto track =
      sample_track([](double t) { return Vec2(100.0 + 600.0 * t, 500.0 - 700.0 * t + 600.0 * t * t); }, 0.0, 30, 0.04);
  const auto segs = segment_rally(track, SegConfig{});
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].start_idx, 0u);
  EXPECT_EQ(segs[0].end_idx, 29u);
}

TEST(SegmentRally, TwoArcsBreakpointMatchesBruteForce) {
  std::mt19937_64 rng(2);
  const auto track = two_arcs(15, 15, 1.0, rng);
  SegConfig cfg;
  cfg.lambda = 10.0;
  const auto segs = segment_rally(track, cfg);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_LE(std::abs(static_cast<long>(segs[1].start_idx) - 15), 1);

  // oracle: best single breakpoint by enumeration
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_b = 0;
  for (std::size_t b = 3; b + 3 <= track.size(); ++b) {
    const double c = segment_cost(track, fit_segment(track, 0, b - 1), cfg) +
                     segment_cost(track, fit_segment(track, b, track.size() - 1), cfg) + 2.0 * cfg.lambda;
    if (c < best) {
      best = c;
      best_b = b;
    }
  }
  EXPECT_EQ(segs[1].start_idx, best_b);
  EXPECT_NEAR(segmentation_objective(track, segs, cfg), best, 1e-9);
}

TEST(SegmentRally, BlurRecoversShortArc) {
  // three detections after a mild kink (about 17 degrees): the position term alone
  // cannot pay for a new segment
  std::mt19937_64 rng(3);
  const auto track = two_arcs(15, 3, 0.0, rng, true, Vec2(406.0, 100.0));
  SegConfig no_blur;
  no_blur.lambda = 30.0;
  no_blur.blur_weight = 0.0;
  EXPECT_EQ(segment_rally(track, no_blur).size(), 1u);

  SegConfig with_blur = no_blur;
  with_blur.blur_weight = 50.0;
  const auto segs = segment_rally(track, with_blur);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[1].start_idx, 15u);
}

TEST(SegmentRally, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(6, 24);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::normal_distribution<double> N(0.0, 3.0);
  for (int trial = 0; trial < 30; ++trial) {
    RallyTrack track;
    const int n = len(rng);
    double u = 600, v = 300, du = 300 * U(rng), dv = 300 * U(rng);
    for (int k = 0; k < n; ++k) {
      if (U(rng) > 0.7) {
        du = 400 * U(rng);
        dv = 400 * U(rng);
      }
      u += du * 0.04;
      v += dv * 0.04;
      dv += 20.0;
      track.push_back(Detection{k, 0.04 * k, u + N(rng), v + N(rng), U(rng), std::nullopt});
    }
    SegConfig cfg;
    cfg.lambda = 5.0 + 20.0 * std::abs(U(rng));
    const auto segs = segment_rally(track, cfg);
    const auto oracle = testutil::brute_force_segmentation(track, cfg);
    EXPECT_NEAR(segmentation_objective(track, segs, cfg), oracle.objective, 1e-9 * std::max(1.0, oracle.objective));
  }
}

TEST(SegmentRally, TranslationInvariant) {
  std::mt19937_64 rng(5);
  const auto track = two_arcs(12, 10, 2.0, rng);
  auto shifted = track;
  for (auto& d : shifted) {
    d.u += 137.25;
    d.v -= 61.5;
  }
  SegConfig cfg;
  cfg.lambda = 10.0;
  const auto a = segment_rally(track, cfg);
  const auto b = segment_rally(shifted, cfg);
  ASSERT_EQ(starts_of(a), starts_of(b));
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k].fit_cost, b[k].fit_cost, 1e-8);
}

TEST(SegmentRally, SegmentCountNonIncreasingInLambda) {
  std::mt19937_64 rng(6);
  const auto track = two_arcs(14, 14, 3.0, rng);
  std::size_t prev = track.size();
  for (double lambda : {0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0, 1000.0, 1e5}) {
    SegConfig cfg;
    cfg.lambda = lambda;
    const std::size_t k = segment_rally(track, cfg).size();
    EXPECT_LE(k, prev) << "lambda " << lambda;
    prev = k;
  }
  EXPECT_EQ(prev, 1u);
}

TEST(SegmentRally, GapsSplitSegments) {
  RallyTrack track = sample_track([](double t) { return Vec2(100.0 + 600.0 * t, 500.0 - 700.0 * t + 600.0 * t * t); },
                                  0.0, 20, 0.04);
  for (std::size_t k = 10; k < track.size(); ++k) {
    track[k].frame += 7;  // 7 missing frames between 9 and 10
    track[k].t += 7 * 0.04;
    track[k].u = 100.0 + 600.0 * track[k].t;
    track[k].v = 500.0 - 700.0 * track[k].t + 600.0 * track[k].t * track[k].t;
  }
  const auto segs = segment_rally(track, SegConfig{});
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[1].start_idx, 10u);
}

TEST(SegmentRally, TooShort) {
  const auto track = sample_track([](double t) { return Vec2(t, t); }, 0.0, 2, 0.04);
  EXPECT_TT3D_ERROR(segment_rally(track, SegConfig{}), Errc::TrackTooShort);
}

TEST(LocateEvent, ExactCrossing) {
  auto left = [](double t) {
    const double s = t - 1.0;
    return Vec2(500.0 + 200.0 * s - 30.0 * s * s, 400.0 - 300.0 * s + 400.0 * s * s);
  };
  auto right = [](double t) {
    const double s = t - 1.0;
    return Vec2(500.0 + 200.0 * s + 10.0 * s * s, 400.0 + 250.0 * s + 300.0 * s * s);
  };
  const auto a = exact_segment(left, 0.6, 0.96);
  const auto b = exact_segment(right, 1.04, 1.4);
  const auto loc = locate_event(a, b, 0.04);
  EXPECT_NEAR(loc.t_star, 1.0, 1e-6);
  EXPECT_LT((loc.point - Vec2(500.0, 400.0)).norm(), 1e-6);
}

TEST(LocateEvent, ParallelCurvesDoNotMeet) {
  auto left = [](double t) { return Vec2(100.0 + 300.0 * t, 200.0 + 100.0 * t * t); };
  auto right = [](double t) { return Vec2(100.0 + 300.0 * t, 250.0 + 100.0 * t * t); };
  const auto a = exact_segment(left, 0.0, 0.4);
  const auto b = exact_segment(right, 0.44, 0.8);
  EXPECT_TT3D_ERROR(locate_event(a, b, 0.04), Errc::NoIntersectionInWindow);
}

TEST(LocateEvent, SubFrameBounceTimeFromPhysics) {
  // ball bounces at t = 0.437 s; the camera samples at 25 fps starting at t = 0
  const auto params = PhysParams::table_tennis();
  const double t_bounce = 0.437;
  BallState at_bounce;
  at_bounce.p = Vec3(0.1, 0.6, params.r);
  at_bounce.v = Vec3(-0.2, 5.5, -2.8);
  at_bounce.w = Vec3(-60.0, 0.0, 10.0);
  at_bounce.t = t_bounce;
  const auto bounce = apply_bounce(at_bounce.v, at_bounce.w, params);
  BallState after = at_bounce;
  after.v = bounce.v_plus;
  after.w = bounce.w_plus;

  CalibratedCamera cam;
  cam.intrinsics = Intrinsics::centered(1800.0, 1280, 720);
  cam.pose = look_at(Vec3(6.0, 0.0, 2.2), Vec3(0.0, 0.0, 0.1));
  RallyTrack track;
  for (int k = 0; k * 0.04 < 0.8; ++k) {
    const double t = k * 0.04;
    const BallState s = t < t_bounce ? propagate(at_bounce, t, 1.0 / 500.0, params)
                                     : propagate(after, t, 1.0 / 500.0, params);
    const Vec2 px = project(cam, s.p);
    track.push_back(Detection{k, t, px.x(), px.y(), std::nullopt, std::nullopt});
  }
  const auto segs = segment_rally(track, SegConfig{});
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[1].start_idx, 11u);  // first frame after 0.437 s is t = 0.44
  const auto loc = locate_event(segs[0], segs[1], frame_interval(track));
  EXPECT_LT(std::abs(loc.t_star - t_bounce), 0.01);
  const Vec2 true_px = project(cam, at_bounce.p);
  const double step_px = (track[11].px() - track[10].px()).norm();
  EXPECT_LT((loc.point - true_px).norm(), step_px);
}

namespace {

CalibratedCamera side_camera() {
  CalibratedCamera cam;
  cam.intrinsics = Intrinsics::centered(1800.0, 1280, 720);
  cam.pose = look_at(Vec3(6.0, 0.0, 2.2), Vec3(0.0, 0.0, 0.1));
  return cam;
}

// Image-space segments of a 3D path given piecewise by two closures meeting at t = 1.
std::vector<Segment> segments_from_world(const CalibratedCamera& cam, const std::function<Vec3(double)>& before,
                                         const std::function<Vec3(double)>& after) {
  RallyTrack track;
  for (int k = 0; k < 20; ++k) {
    const double t = 0.6 + 0.04 * k + 0.01;
    const Vec2 px = project(cam, t < 1.0 ? before(t) : after(t));
    track.push_back(Detection{k, t, px.x(), px.y(), std::nullopt, std::nullopt});
  }
  return {fit_segment(track, 0, 9), fit_segment(track, 10, 19)};
}

std::vector<EventKind> classify_world(const CalibratedCamera& cam, const std::function<Vec3(double)>& before,
                                      const std::function<Vec3(double)>& after) {
  const auto segs = segments_from_world(cam, before, after);
  const auto locs = locate_events(segs, 0.04, EventConfig{2.0, 50.0});
  std::vector<EventKind> kinds;
  for (const auto& e : classify_events(segs, locs, cam)) kinds.push_back(e.kind);
  return kinds;
}

}  // namespace

TEST(ClassifyEvents, BounceKeepsLongitudinalDirection) {
  const auto cam = side_camera();
  auto before = [](double t) { return Vec3(0.0, 0.5 + 5.0 * (t - 1.0), 0.02 - 3.0 * (t - 1.0) - 4.9 * std::pow(t - 1.0, 2)); };
  auto after = [](double t) { return Vec3(0.0, 0.5 + 4.0 * (t - 1.0), 0.02 + 2.5 * (t - 1.0) - 4.9 * std::pow(t - 1.0, 2)); };
  EXPECT_EQ(classify_world(cam, before, after), std::vector<EventKind>{EventKind::TableBounce});
}

TEST(ClassifyEvents, ReversalIsStrike) {
  const auto cam = side_camera();
  auto before = [](double t) { return Vec3(0.1, 1.9 + 5.0 * (t - 1.0), 0.3 + 1.0 * (t - 1.0) - 4.9 * std::pow(t - 1.0, 2)); };
  auto after = [](double t) { return Vec3(0.1, 1.9 - 6.0 * (t - 1.0), 0.3 + 1.5 * (t - 1.0) - 4.9 * std::pow(t - 1.0, 2)); };
  EXPECT_EQ(classify_world(cam, before, after), std::vector<EventKind>{EventKind::RacketStrike});
  // mirrored along Y
  auto mb = [&](double t) { Vec3 p = before(t); p.y() = -p.y(); return p; };
  auto ma = [&](double t) { Vec3 p = after(t); p.y() = -p.y(); return p; };
  EXPECT_EQ(classify_world(cam, mb, ma), std::vector<EventKind>{EventKind::RacketStrike});
}

TEST(ClassifyEvents, VerticalOnlyChangeIsBounce) {
  // net-cord style drop: same longitudinal sign, sudden vertical change
  const auto cam = side_camera();
  auto before = [](double t) { return Vec3(0.0, 0.0 + 6.0 * (t - 1.0), 0.18 + 0.5 * (t - 1.0)); };
  auto after = [](double t) { return Vec3(0.0, 0.0 + 1.5 * (t - 1.0), 0.18 - 1.0 * (t - 1.0) - 4.9 * std::pow(t - 1.0, 2)); };
  EXPECT_EQ(classify_world(cam, before, after), std::vector<EventKind>{EventKind::TableBounce});
}
