#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tt3d {

enum class Errc {
  PointBehindCamera,
  RayParallelToPlane,
  DegenerateConfiguration,
  NoConvergence,
  ImplausiblePose,
  NoPlausibleOrdering,
  EmptyStream,
  TooFewPoints,
  NoBlurData,
  TrackTooShort,
  NoIntersectionInWindow,
  PlaneCrossing,
  BallMovingAway,
  AnchorOutsideTable,
  TooFewObservations,
  BallLeftPlayVolume,
  InvalidArgument,
  ParseError,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::PointBehindCamera: return "PointBehindCamera";
    case Errc::RayParallelToPlane: return "RayParallelToPlane";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::ImplausiblePose: return "ImplausiblePose";
    case Errc::NoPlausibleOrdering: return "NoPlausibleOrdering";
    case Errc::EmptyStream: return "EmptyStream";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::NoBlurData: return "NoBlurData";
    case Errc::TrackTooShort: return "TrackTooShort";
    case Errc::NoIntersectionInWindow: return "NoIntersectionInWindow";
    case Errc::PlaneCrossing: return "PlaneCrossing";
    case Errc::BallMovingAway: return "BallMovingAway";
    case Errc::AnchorOutsideTable: return "AnchorOutsideTable";
    case Errc::TooFewObservations: return "TooFewObservations";
    case Errc::BallLeftPlayVolume: return "BallLeftPlayVolume";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace tt3d
