#pragma once

// File formats: one JSON object per line for records, a single JSON object for
// configurations, and CSV for trajectories and benchmark tables. Writing what
// was read reproduces the input byte for byte.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "tt3d/calib.hpp"
#include "tt3d/camgeom.hpp"
#include "tt3d/error.hpp"
#include "tt3d/physics.hpp"
#include "tt3d/rallyseg.hpp"
#include "tt3d/recon.hpp"
#include "tt3d/synthbench.hpp"

namespace tt3d {

using Json = nlohmann::ordered_json;

/// Table keypoints detected in one frame.
struct KeypointFrame {
  int frame = 0;
  double t = 0.0;
  ImageSize image{1280, 720};
  bool labelled = false;                        // corners already in Corner0..Corner3 order
  std::optional<std::array<Vec2, 4>> corners;   // empty: no usable keypoints in this frame
  std::optional<std::array<Vec2, 2>> midline;   // front and back ends of the centre line
};

/// One entry of a filtered calibration stream.
struct CalibrationRecord {
  int frame = 0;
  TrackedCamera tracked;
};

// ---------------------------------------------------------------------------
// Scalars and enums

inline std::string format_number(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

inline double parse_number(std::string_view s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::ParseError, "not a number: '" + std::string(s) + "'");
  }
  return x;
}

inline std::string_view to_string(Sport s) { return s == Sport::TableTennis ? "table-tennis" : "tennis"; }
inline std::string_view to_string(CourtSurface s) { return s == CourtSurface::Grass ? "grass" : "clay"; }

inline Sport parse_sport(std::string_view s) {
  if (s == "table-tennis") return Sport::TableTennis;
  if (s == "tennis") return Sport::Tennis;
  throw Error(Errc::ParseError, "unknown sport '" + std::string(s) + "'");
}

inline CourtSurface parse_surface(std::string_view s) {
  if (s == "grass") return CourtSurface::Grass;
  if (s == "clay") return CourtSurface::Clay;
  throw Error(Errc::ParseError, "unknown court surface '" + std::string(s) + "'");
}

inline EventKind parse_event_kind(std::string_view s) {
  if (s == "bounce") return EventKind::TableBounce;
  if (s == "strike") return EventKind::RacketStrike;
  throw Error(Errc::ParseError, "unknown event kind '" + std::string(s) + "'");
}

inline BounceRegime parse_regime(std::string_view s) {
  if (s == "rolling") return BounceRegime::Rolling;
  if (s == "sliding") return BounceRegime::Sliding;
  throw Error(Errc::ParseError, "unknown bounce regime '" + std::string(s) + "'");
}

inline Errc parse_errc(std::string_view s) {
  for (int k = 0; k <= static_cast<int>(Errc::ParseError); ++k) {
    if (to_string(static_cast<Errc>(k)) == s) return static_cast<Errc>(k);
  }
  throw Error(Errc::ParseError, "unknown error code '" + std::string(s) + "'");
}

inline std::string_view noise_label(bool noisy) { return noisy ? "noisy" : "clean"; }

inline bool parse_noise_label(std::string_view s) {
  if (s == "clean") return false;
  if (s == "noisy") return true;
  throw Error(Errc::ParseError, "unknown noise level '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// JSON value conversion

namespace detail {

inline Error type_error(const Json& j, std::string_view expected) {
  return Error(Errc::ParseError, "expected " + std::string(expected) + ", got " + std::string(j.type_name()));
}

template <int N>
Json vec_json(const Eigen::Matrix<double, N, 1>& v) {
  Json a = Json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

inline Json mat_json(const Mat3& m) {
  Json a = Json::array();
  for (int r = 0; r < 3; ++r) a.push_back(vec_json<3>(m.row(r).transpose()));
  return a;
}

inline void convert(const Json& j, double& x) {
  if (j.is_null()) {
    x = std::numeric_limits<double>::quiet_NaN();
  } else if (j.is_number()) {
    x = j.get<double>();
  } else {
    throw type_error(j, "number");
  }
}

inline void convert(const Json& j, bool& x) {
  if (!j.is_boolean()) throw type_error(j, "boolean");
  x = j.get<bool>();
}

template <class I>
  requires(std::is_integral_v<I> && !std::is_same_v<I, bool>)
void convert(const Json& j, I& x) {
  if (!j.is_number_integer()) throw type_error(j, "integer");
  if constexpr (std::is_unsigned_v<I>) {
    if (j.is_number_unsigned()) {
      x = j.get<I>();
      return;
    }
    if (j.get<std::int64_t>() < 0) throw Error(Errc::ParseError, "expected a non-negative integer");
  }
  x = j.get<I>();
}

inline void convert(const Json& j, std::string& x) {
  if (!j.is_string()) throw type_error(j, "string");
  x = j.get<std::string>();
}

template <int N>
void convert(const Json& j, Eigen::Matrix<double, N, 1>& v) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
    throw Error(Errc::ParseError, "expected an array of " + std::to_string(N) + " numbers");
  }
  for (int i = 0; i < N; ++i) convert(j[static_cast<std::size_t>(i)], v[i]);
}

inline void convert(const Json& j, Mat3& m) {
  if (!j.is_array() || j.size() != 3) throw Error(Errc::ParseError, "expected a 3x3 matrix");
  for (int r = 0; r < 3; ++r) {
    Vec3 row;
    convert(j[static_cast<std::size_t>(r)], row);
    m.row(r) = row.transpose();
  }
}

template <class T>
void convert(const Json& j, T& x);

template <class T, std::size_t N>
void convert(const Json& j, std::array<T, N>& a) {
  if (!j.is_array() || j.size() != N) throw Error(Errc::ParseError, "expected an array of " + std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) convert(j[i], a[i]);
}

template <class T>
void convert(const Json& j, std::vector<T>& v) {
  if (!j.is_array()) throw type_error(j, "array");
  v.clear();
  v.reserve(j.size());
  for (const auto& e : j) {
    T x{};
    convert(e, x);
    v.push_back(std::move(x));
  }
}

inline void convert(const Json& j, std::vector<bool>& v) {
  if (!j.is_array()) throw type_error(j, "array");
  v.clear();
  for (const auto& e : j) {
    bool b = false;
    convert(e, b);
    v.push_back(b);
  }
}

template <class T>
void convert(const Json& j, T& x) {
  read_json(j, x);
}

/// Reads the members of one JSON object and rejects members nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw Error(Errc::ParseError, what_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw Error(Errc::ParseError, what_ + ": missing '" + key + "'");
    get(key, out);
  }

  template <class T>
  void optional(const char* key, T& out) {
    if (j_.contains(key)) get(key, out);
  }

  template <class T>
  void optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!has(key)) {
      out.reset();
      return;
    }
    T x{};
    wrap(key, [&] { convert(j_.at(key), x); });
    out = std::move(x);
  }

  template <class F>
  void custom(const char* key, F&& parse) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    wrap(key, [&] { parse(j_.at(key)); });
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(Errc::ParseError, what_ + ": unknown member '" + item.key() + "'");
    }
  }

 private:
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    wrap(key, [&] { convert(j_.at(key), out); });
  }

  template <class F>
  void wrap(const char* key, F&& f) const {
    try {
      f();
    } catch (const Error& e) {
      throw Error(Errc::ParseError, what_ + "." + key + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, what_ + "." + key + ": " + e.what());
    }
  }

  const Json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

template <class F>
auto read_enum(const Json& j, F&& parse) {
  std::string s;
  convert(j, s);
  return parse(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Records

inline Json write_json(const Detection& d) {
  Json j;
  j["frame"] = d.frame;
  j["t"] = d.t;
  j["u"] = d.u;
  j["v"] = d.v;
  if (d.blur_angle) j["blur_angle"] = *d.blur_angle;
  if (d.blur_length) j["blur_length"] = *d.blur_length;
  return j;
}

inline void read_json(const Json& j, Detection& d) {
  detail::ObjectReader r(j, "detection");
  r.required("frame", d.frame);
  r.required("t", d.t);
  r.required("u", d.u);
  r.required("v", d.v);
  r.optional("blur_angle", d.blur_angle);
  r.optional("blur_length", d.blur_length);
  r.finish();
}

inline Json write_json(const KeypointFrame& k) {
  Json j;
  j["frame"] = k.frame;
  j["t"] = k.t;
  j["width"] = k.image.width;
  j["height"] = k.image.height;
  j["labelled"] = k.labelled;
  if (k.corners) {
    Json c = Json::array();
    for (const auto& p : *k.corners) c.push_back(detail::vec_json<2>(p));
    j["corners"] = c;
  } else {
    j["corners"] = nullptr;
  }
  if (k.midline) j["midline"] = Json::array({detail::vec_json<2>((*k.midline)[0]), detail::vec_json<2>((*k.midline)[1])});
  return j;
}

inline void read_json(const Json& j, KeypointFrame& k) {
  detail::ObjectReader r(j, "keypoints");
  r.required("frame", k.frame);
  r.required("t", k.t);
  r.required("width", k.image.width);
  r.required("height", k.image.height);
  r.optional("labelled", k.labelled);
  r.optional("corners", k.corners);
  r.optional("midline", k.midline);
  r.finish();
}

inline Json write_json(const CalibratedCamera& c) {
  Json j;
  j["f"] = c.intrinsics.f;
  j["width"] = c.intrinsics.width;
  j["height"] = c.intrinsics.height;
  j["cx"] = c.intrinsics.cx;
  j["cy"] = c.intrinsics.cy;
  j["R"] = detail::mat_json(c.pose.R);
  j["T"] = detail::vec_json<3>(c.pose.T);
  j["rmse"] = c.reprojection_rmse;
  return j;
}

inline void read_camera_members(detail::ObjectReader& r, CalibratedCamera& c) {
  r.required("f", c.intrinsics.f);
  r.required("width", c.intrinsics.width);
  r.required("height", c.intrinsics.height);
  r.required("cx", c.intrinsics.cx);
  r.required("cy", c.intrinsics.cy);
  r.required("R", c.pose.R);
  r.required("T", c.pose.T);
  r.optional("rmse", c.reprojection_rmse);
}

inline void read_json(const Json& j, CalibratedCamera& c) {
  detail::ObjectReader r(j, "camera");
  read_camera_members(r, c);
  r.finish();
}

inline Json write_json(const CalibrationRecord& c) {
  Json j;
  j["frame"] = c.frame;
  j["t"] = c.tracked.t;
  j.update(write_json(c.tracked.camera));
  j["measured"] = c.tracked.measured;
  j["accepted"] = c.tracked.accepted;
  return j;
}

inline void read_json(const Json& j, CalibrationRecord& c) {
  detail::ObjectReader r(j, "calibration");
  r.required("frame", c.frame);
  r.required("t", c.tracked.t);
  read_camera_members(r, c.tracked.camera);
  r.optional("measured", c.tracked.measured);
  r.optional("accepted", c.tracked.accepted);
  r.finish();
}

inline Json write_json(const Segment& s) {
  Json j;
  j["start"] = s.start_idx;
  j["end"] = s.end_idx;
  j["t_start"] = s.t_start;
  j["t_end"] = s.t_end;
  j["coeff_u"] = s.coeff_u;
  j["coeff_v"] = s.coeff_v;
  j["fit_cost"] = s.fit_cost;
  return j;
}

inline void read_json(const Json& j, Segment& s) {
  detail::ObjectReader r(j, "segment");
  r.required("start", s.start_idx);
  r.required("end", s.end_idx);
  r.required("t_start", s.t_start);
  r.required("t_end", s.t_end);
  r.required("coeff_u", s.coeff_u);
  r.required("coeff_v", s.coeff_v);
  r.required("fit_cost", s.fit_cost);
  r.finish();
  if (s.end_idx < s.start_idx) throw Error(Errc::ParseError, "segment ends before it starts");
}

inline Json write_json(const Event& e) {
  Json j;
  j["kind"] = to_string(e.kind);
  j["t_star"] = e.t_star;
  j["u"] = e.image_point.x();
  j["v"] = e.image_point.y();
  j["left"] = e.left_segment;
  j["right"] = e.right_segment;
  j["low_confidence"] = e.low_confidence;
  return j;
}

inline void read_json(const Json& j, Event& e) {
  detail::ObjectReader r(j, "event");
  r.custom("kind", [&](const Json& v) { e.kind = detail::read_enum(v, parse_event_kind); });
  if (!j.contains("kind")) throw Error(Errc::ParseError, "event: missing 'kind'");
  r.required("t_star", e.t_star);
  r.required("u", e.image_point.x());
  r.required("v", e.image_point.y());
  r.required("left", e.left_segment);
  r.required("right", e.right_segment);
  r.optional("low_confidence", e.low_confidence);
  r.finish();
}

/// Result record for one bounce. The sampled trajectory goes to its own CSV.
inline Json write_json(const BounceReconstruction& b) {
  Json j;
  j["event"] = write_json(b.event);
  j["status"] = b.error ? std::string(to_string(*b.error)) : std::string("ok");
  j["message"] = b.message;
  j["pre_count"] = b.pre_count;
  j["post_count"] = b.post_count;
  j["anchor"] = b.anchor ? detail::vec_json<3>(b.anchor->position) : Json(nullptr);
  if (b.result) {
    const ReconResult& r = *b.result;
    Json res;
    res["v_minus"] = detail::vec_json<3>(r.v_minus);
    res["w_minus"] = detail::vec_json<3>(r.w_minus);
    res["v_plus"] = detail::vec_json<3>(r.v_plus);
    res["w_plus"] = detail::vec_json<3>(r.w_plus);
    res["regime"] = to_string(r.regime);
    res["reproj_rmse"] = r.reproj_rmse;
    res["converged"] = r.converged;
    res["iterations"] = r.iterations;
    res["starts_tried"] = r.starts_tried;
    res["identifiability_warning"] = r.identifiability_warning;
    res["cost_history"] = r.cost_history;
    j["result"] = res;
  } else {
    j["result"] = nullptr;
  }
  return j;
}

inline void read_json(const Json& j, ReconResult& res) {
  detail::ObjectReader r(j, "result");
  r.required("v_minus", res.v_minus);
  r.required("w_minus", res.w_minus);
  r.required("v_plus", res.v_plus);
  r.required("w_plus", res.w_plus);
  r.custom("regime", [&](const Json& v) { res.regime = detail::read_enum(v, parse_regime); });
  r.required("reproj_rmse", res.reproj_rmse);
  r.required("converged", res.converged);
  r.required("iterations", res.iterations);
  r.optional("starts_tried", res.starts_tried);
  r.optional("identifiability_warning", res.identifiability_warning);
  r.optional("cost_history", res.cost_history);
  r.finish();
}

inline void read_json(const Json& j, BounceReconstruction& b) {
  detail::ObjectReader r(j, "bounce");
  r.required("event", b.event);
  std::string status = "ok";
  r.required("status", status);
  if (status == "ok") {
    b.error.reset();
  } else {
    b.error = parse_errc(status);
  }
  r.optional("message", b.message);
  r.optional("pre_count", b.pre_count);
  r.optional("post_count", b.post_count);
  std::optional<Vec3> anchor;
  r.optional("anchor", anchor);
  if (anchor) {
    b.anchor = BounceAnchor{*anchor, b.event.t_star, b.event};
  } else {
    b.anchor.reset();
  }
  r.optional("result", b.result);
  r.finish();
}

// ---------------------------------------------------------------------------
// Configurations. Absent members keep their defaults.

inline Json write_json(const PhysParams& p) {
  Json j;
  j["sport"] = to_string(p.sport);
  j["surface"] = to_string(p.surface);
  j["m"] = p.m;
  j["k_D"] = p.k_D;
  j["k_M"] = p.k_M;
  j["g"] = detail::vec_json<3>(p.g);
  j["r"] = p.r;
  j["mu"] = p.mu;
  j["k_COR"] = p.k_COR;
  j["alpha_threshold"] = p.alpha_threshold;
  j["rho"] = p.rho;
  return j;
}

inline void read_json(const Json& j, PhysParams& p) {
  detail::ObjectReader r(j, "physics");
  r.custom("sport", [&](const Json& v) { p.sport = detail::read_enum(v, parse_sport); });
  r.custom("surface", [&](const Json& v) { p.surface = detail::read_enum(v, parse_surface); });
  r.optional("m", p.m);
  r.optional("k_D", p.k_D);
  r.optional("k_M", p.k_M);
  r.optional("g", p.g);
  r.optional("r", p.r);
  r.optional("mu", p.mu);
  r.optional("k_COR", p.k_COR);
  r.optional("alpha_threshold", p.alpha_threshold);
  r.optional("rho", p.rho);
  r.finish();
}

inline Json write_json(const SegConfig& c) {
  Json j;
  j["lambda"] = c.lambda;
  j["blur_weight"] = c.blur_weight;
  j["min_segment_len"] = c.min_segment_len;
  j["max_gap_frames"] = c.max_gap_frames;
  j["irls_rounds"] = c.irls_rounds;
  return j;
}

inline void read_json(const Json& j, SegConfig& c) {
  detail::ObjectReader r(j, "seg");
  r.optional("lambda", c.lambda);
  r.optional("blur_weight", c.blur_weight);
  r.optional("min_segment_len", c.min_segment_len);
  r.optional("max_gap_frames", c.max_gap_frames);
  r.optional("irls_rounds", c.irls_rounds);
  r.finish();
}

inline Json write_json(const EventConfig& c) {
  Json j;
  j["window_frames"] = c.window_frames;
  j["gate_px"] = c.gate_px;
  return j;
}

inline void read_json(const Json& j, EventConfig& c) {
  detail::ObjectReader r(j, "events");
  r.optional("window_frames", c.window_frames);
  r.optional("gate_px", c.gate_px);
  r.finish();
}

inline Json write_json(const CalibConfig& c) {
  Json j;
  j["f0"] = c.f0;
  j["epsilon"] = c.epsilon;
  j["max_iters"] = c.max_iters;
  j["f_min"] = c.f_min;
  j["f_max"] = c.f_max;
  j["max_camera_distance"] = c.max_camera_distance;
  return j;
}

inline void read_json(const Json& j, CalibConfig& c) {
  detail::ObjectReader r(j, "calib");
  r.optional("f0", c.f0);
  r.optional("epsilon", c.epsilon);
  r.optional("max_iters", c.max_iters);
  r.optional("f_min", c.f_min);
  r.optional("f_max", c.f_max);
  r.optional("max_camera_distance", c.max_camera_distance);
  r.finish();
}

inline Json write_json(const TrackerConfig& c) {
  Json j;
  j["nominal_dt"] = c.nominal_dt;
  j["process_f_rel"] = c.process_f_rel;
  j["process_rot_deg"] = c.process_rot_deg;
  j["process_T"] = c.process_T;
  j["meas_f_rel"] = c.meas_f_rel;
  j["meas_rot_deg"] = c.meas_rot_deg;
  j["meas_T"] = c.meas_T;
  j["gate_chi2"] = c.gate_chi2;
  j["max_consecutive_rejections"] = c.max_consecutive_rejections;
  return j;
}

inline void read_json(const Json& j, TrackerConfig& c) {
  detail::ObjectReader r(j, "tracker");
  r.optional("nominal_dt", c.nominal_dt);
  r.optional("process_f_rel", c.process_f_rel);
  r.optional("process_rot_deg", c.process_rot_deg);
  r.optional("process_T", c.process_T);
  r.optional("meas_f_rel", c.meas_f_rel);
  r.optional("meas_rot_deg", c.meas_rot_deg);
  r.optional("meas_T", c.meas_T);
  r.optional("gate_chi2", c.gate_chi2);
  r.optional("max_consecutive_rejections", c.max_consecutive_rejections);
  r.finish();
}

inline Json write_json(const ReconOptions& o) {
  Json j;
  j["dt"] = o.dt;
  j["sample_dt"] = o.sample_dt;
  j["max_iters"] = o.max_iters;
  j["step_v"] = o.step_v;
  j["step_w"] = o.step_w;
  j["multi_start"] = o.multi_start;
  j["restart_rmse_px"] = o.restart_rmse_px;
  j["max_spin"] = o.max_spin;
  return j;
}

inline void read_json(const Json& j, ReconOptions& o) {
  detail::ObjectReader r(j, "recon");
  r.optional("dt", o.dt);
  r.optional("sample_dt", o.sample_dt);
  r.optional("max_iters", o.max_iters);
  r.optional("step_v", o.step_v);
  r.optional("step_w", o.step_w);
  r.optional("multi_start", o.multi_start);
  r.optional("restart_rmse_px", o.restart_rmse_px);
  r.optional("max_spin", o.max_spin);
  r.finish();
}

inline Json write_json(const SuccessCriteria& c) {
  Json j;
  j["max_rmse_px"] = c.max_rmse_px;
  j["play_margin"] = c.play_margin;
  j["max_height"] = c.max_height;
  return j;
}

inline void read_json(const Json& j, SuccessCriteria& c) {
  detail::ObjectReader r(j, "success");
  r.optional("max_rmse_px", c.max_rmse_px);
  r.optional("play_margin", c.play_margin);
  r.optional("max_height", c.max_height);
  r.finish();
}

inline Json write_json(const NoiseModel& n) {
  Json j;
  j["sigma_p"] = n.sigma_p;
  j["sigma_theta"] = n.sigma_theta;
  j["sigma_l"] = n.sigma_l;
  j["drop_rate"] = n.drop_rate;
  j["seed"] = n.seed;
  return j;
}

inline void read_json(const Json& j, NoiseModel& n) {
  detail::ObjectReader r(j, "noise");
  r.optional("sigma_p", n.sigma_p);
  r.optional("sigma_theta", n.sigma_theta);
  r.optional("sigma_l", n.sigma_l);
  r.optional("drop_rate", n.drop_rate);
  r.optional("seed", n.seed);
  r.finish();
}

inline Json write_json(const ShotEnvelope& e) {
  Json j;
  j["speed_min"] = e.speed_min;
  j["speed_max"] = e.speed_max;
  j["elevation_min_deg"] = e.elevation_min_deg;
  j["elevation_max_deg"] = e.elevation_max_deg;
  j["spin_max"] = e.spin_max;
  j["post_bounce_min"] = e.post_bounce_min;
  j["post_bounce_max"] = e.post_bounce_max;
  j["net_height"] = e.net_height;
  j["min_strike_height"] = e.min_strike_height;
  j["max_strike_distance"] = e.max_strike_distance;
  j["max_tries"] = e.max_tries;
  return j;
}

inline void read_json(const Json& j, ShotEnvelope& e) {
  detail::ObjectReader r(j, "envelope");
  r.optional("speed_min", e.speed_min);
  r.optional("speed_max", e.speed_max);
  r.optional("elevation_min_deg", e.elevation_min_deg);
  r.optional("elevation_max_deg", e.elevation_max_deg);
  r.optional("spin_max", e.spin_max);
  r.optional("post_bounce_min", e.post_bounce_min);
  r.optional("post_bounce_max", e.post_bounce_max);
  r.optional("net_height", e.net_height);
  r.optional("min_strike_height", e.min_strike_height);
  r.optional("max_strike_distance", e.max_strike_distance);
  r.optional("max_tries", e.max_tries);
  r.finish();
}

inline Json write_json(const BenchConfig& c) {
  Json j;
  Json views = Json::array();
  for (auto v : c.views) views.push_back(to_string(v));
  Json noise = Json::array();
  for (bool n : c.noise_levels) noise.push_back(noise_label(n));
  Json modes = Json::array();
  for (auto m : c.calib_modes) modes.push_back(to_string(m));
  j["views"] = views;
  j["noise_levels"] = noise;
  j["calib_modes"] = modes;
  j["n_trajectories"] = c.n_trajectories;
  j["seed"] = c.seed;
  j["noise"] = write_json(c.noise);
  j["fps"] = c.fps;
  j["focal"] = c.focal;
  j["width"] = c.image.width;
  j["height"] = c.image.height;
  j["use_blur"] = c.use_blur;
  j["jobs"] = c.jobs;
  j["physics"] = write_json(c.params);
  j["envelope"] = write_json(c.envelope);
  j["seg"] = write_json(c.seg);
  j["events"] = write_json(c.events);
  j["recon"] = write_json(c.recon);
  j["success"] = write_json(c.success);
  j["calib"] = write_json(c.calib);
  return j;
}

inline void read_json(const Json& j, BenchConfig& c) {
  detail::ObjectReader r(j, "bench");
  r.custom("views", [&](const Json& v) {
    std::vector<std::string> names;
    detail::convert(v, names);
    c.views.clear();
    for (const auto& n : names) c.views.push_back(parse_view(n));
  });
  r.custom("noise_levels", [&](const Json& v) {
    std::vector<std::string> names;
    detail::convert(v, names);
    c.noise_levels.clear();
    for (const auto& n : names) c.noise_levels.push_back(parse_noise_label(n));
  });
  r.custom("calib_modes", [&](const Json& v) {
    std::vector<std::string> names;
    detail::convert(v, names);
    c.calib_modes.clear();
    for (const auto& n : names) c.calib_modes.push_back(parse_calib_mode(n));
  });
  r.optional("n_trajectories", c.n_trajectories);
  r.optional("seed", c.seed);
  r.optional("noise", c.noise);
  r.optional("fps", c.fps);
  r.optional("focal", c.focal);
  r.optional("width", c.image.width);
  r.optional("height", c.image.height);
  r.optional("use_blur", c.use_blur);
  r.optional("jobs", c.jobs);
  r.optional("physics", c.params);
  r.optional("envelope", c.envelope);
  r.optional("seg", c.seg);
  r.optional("events", c.events);
  r.optional("recon", c.recon);
  r.optional("success", c.success);
  r.optional("calib", c.calib);
  r.finish();
}

// ---------------------------------------------------------------------------
// Streams and files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ParseError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(Errc::InvalidArgument, "write to '" + path.string() + "' failed");
}

template <class T>
T from_json_text(std::string_view text, std::string_view what = "json") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, std::string(what) + ": " + e.what());
  }
  T x{};
  read_json(j, x);
  return x;
}

template <class T>
std::string to_json_text(const T& x) {
  return write_json(x).dump(2) + "\n";
}

/// Parses one record per non-blank line.
template <class T>
std::vector<T> read_records(std::string_view text) {
  std::vector<T> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      T x{};
      read_json(Json::parse(line), x);
      out.push_back(std::move(x));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <class T>
std::string write_records(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += write_json(r).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw Error(Errc::ParseError, "unterminated quote");
  return fields;
}

/// Splits CSV text into rows after checking the header.
inline std::vector<std::vector<std::string>> csv_rows(std::string_view text, std::string_view header) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error(Errc::ParseError, "expected CSV header '" + std::string(header) + "'");
  }
  const std::size_t width = csv_split(header).size();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = csv_split(line);
    if (fields.size() != width) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                                        " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline int parse_int(std::string_view s) {
  int x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::ParseError, "not an integer: '" + std::string(s) + "'");
  }
  return x;
}

inline bool parse_bool(std::string_view s) {
  if (s == "1") return true;
  if (s == "0") return false;
  throw Error(Errc::ParseError, "not a 0/1 flag: '" + std::string(s) + "'");
}

}  // namespace detail

inline constexpr std::string_view kTrajectoryHeader = "t,x,y,z,vx,vy,vz,wx,wy,wz";

inline std::string write_trajectory_csv(const std::vector<BallState>& states) {
  std::string out(kTrajectoryHeader);
  out += '\n';
  for (const auto& s : states) {
    out += format_number(s.t);
    for (const Vec3* v : {&s.p, &s.v, &s.w}) {
      for (int i = 0; i < 3; ++i) {
        out += ',';
        out += format_number((*v)[i]);
      }
    }
    out += '\n';
  }
  return out;
}

inline std::vector<BallState> read_trajectory_csv(std::string_view text) {
  std::vector<BallState> out;
  for (const auto& f : detail::csv_rows(text, kTrajectoryHeader)) {
    BallState s;
    s.t = parse_number(f[0]);
    for (int i = 0; i < 3; ++i) {
      s.p[i] = parse_number(f[1 + i]);
      s.v[i] = parse_number(f[4 + i]);
      s.w[i] = parse_number(f[7 + i]);
    }
    out.push_back(s);
  }
  return out;
}

inline constexpr std::string_view kSummaryHeader = "view,noise,calib,count,successes,success_pct,mae_cm";
inline constexpr std::string_view kRecordHeader =
    "index,view,noise,calib,detections,observations,success,converged,mae_m,reproj_rmse,t_bounce_error,speed_true,"
    "failure";

inline std::string write_summary_csv(const EvalReport& report) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    out += std::string(to_string(r.view)) + ',' + std::string(noise_label(r.noisy)) + ',' +
           std::string(to_string(r.calib)) + ',' + std::to_string(r.count) + ',' + std::to_string(r.successes) + ',' +
           format_number(r.success_pct) + ',' + format_number(r.mae_cm) + '\n';
  }
  return out;
}

inline std::string write_records_csv(const EvalReport& report) {
  std::string out(kRecordHeader);
  out += '\n';
  for (const auto& r : report.records) {
    out += std::to_string(r.index) + ',' + std::string(to_string(r.view)) + ',' + std::string(noise_label(r.noisy)) +
           ',' + std::string(to_string(r.calib)) + ',' + std::to_string(r.detections) + ',' +
           std::to_string(r.observations) + ',' + (r.success ? "1" : "0") + ',' + (r.converged ? "1" : "0") + ',' +
           format_number(r.mae_m) + ',' + format_number(r.reproj_rmse) + ',' + format_number(r.t_bounce_error) + ',' +
           format_number(r.speed_true) + ',' + detail::csv_field(r.failure) + '\n';
  }
  return out;
}

inline EvalReport read_report_csv(std::string_view summary, std::string_view records) {
  EvalReport report;
  for (const auto& f : detail::csv_rows(summary, kSummaryHeader)) {
    ViewSummary s;
    s.view = parse_view(f[0]);
    s.noisy = parse_noise_label(f[1]);
    s.calib = parse_calib_mode(f[2]);
    s.count = detail::parse_int(f[3]);
    s.successes = detail::parse_int(f[4]);
    s.success_pct = parse_number(f[5]);
    s.mae_cm = parse_number(f[6]);
    report.rows.push_back(s);
  }
  for (const auto& f : detail::csv_rows(records, kRecordHeader)) {
    TrajectoryRecord r;
    r.index = detail::parse_int(f[0]);
    r.view = parse_view(f[1]);
    r.noisy = parse_noise_label(f[2]);
    r.calib = parse_calib_mode(f[3]);
    r.detections = detail::parse_int(f[4]);
    r.observations = detail::parse_int(f[5]);
    r.success = detail::parse_bool(f[6]);
    r.converged = detail::parse_bool(f[7]);
    r.mae_m = parse_number(f[8]);
    r.reproj_rmse = parse_number(f[9]);
    r.t_bounce_error = parse_number(f[10]);
    r.speed_true = parse_number(f[11]);
    r.failure = f[12];
    report.records.push_back(std::move(r));
  }
  return report;
}

/// Human-readable summary: one line per (view, noise, calibration) row.
inline std::string format_report(const EvalReport& report) {
  std::string out = "view     noise  calib        n  success   MAE [cm]\n";
  char line[128];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-8s %-6s %-9s %4d  %6.1f%%  %9.2f\n", std::string(to_string(r.view)).c_str(),
                  std::string(noise_label(r.noisy)).c_str(), std::string(to_string(r.calib)).c_str(), r.count,
                  r.success_pct, r.mae_cm);
    out += line;
  }
  return out;
}

}  // namespace tt3d
