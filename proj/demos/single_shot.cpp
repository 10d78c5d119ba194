// One synthetic serve seen from the side camera: segment the 2D track, find
// the bounce, reconstruct the 3D flight and compare against the ground truth.

#include <cstdio>
#include <cstdlib>
#include <random>

#include "tt3d/rallyseg.hpp"
#include "tt3d/recon.hpp"
#include "tt3d/synthbench.hpp"

using namespace tt3d;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 7;
  const PhysParams params = PhysParams::table_tennis();
  std::mt19937_64 rng(seed);
  const GroundTruthRally gt = random_shot(rng, params);
  const ViewPreset view = make_view(ViewName::Side);
  const CalibratedCamera cam = view.camera();
  const RallyTrack track = render_track(gt, view, NoiseModel::standard(seed));

  const auto segs = segment_rally(track);
  const auto events = classify_events(segs, locate_events(segs, frame_interval(track)), cam);
  const auto recs = reconstruct_rally(track, segs, events, cam, params);
  std::printf("%zu detections, %zu segments, %zu bounce(s) reconstructed\n", track.size(), segs.size(), recs.size());

  const TruthEvent truth = gt.bounces().front();
  for (const auto& br : recs) {
    if (!br.result) {
      std::printf("bounce at %.3f s failed: %s\n", br.event.t_star, br.message.c_str());
      continue;
    }
    const ReconResult& r = *br.result;
    std::printf("bounce at %.3f s (true %.3f s), reprojection rmse %.2f px, %s regime\n", br.event.t_star, truth.t,
                r.reproj_rmse, std::string(to_string(r.regime)).c_str());
    std::printf("  v-  est (%6.2f %6.2f %6.2f)  true (%6.2f %6.2f %6.2f) m/s\n", r.v_minus.x(), r.v_minus.y(),
                r.v_minus.z(), truth.before.v.x(), truth.before.v.y(), truth.before.v.z());
    std::printf("  w-  est (%6.1f %6.1f %6.1f)  true (%6.1f %6.1f %6.1f) rad/s\n", r.w_minus.x(), r.w_minus.y(),
                r.w_minus.z(), truth.before.w.x(), truth.before.w.y(), truth.before.w.z());
    double err = 0.0;
    for (std::size_t k = 0; k < r.obs_times.size(); ++k) err += (r.obs_positions[k] - gt.state_at(r.obs_times[k]).p).norm();
    std::printf("  mean position error %.1f cm over %zu observations\n", 100.0 * err / r.obs_times.size(),
                r.obs_times.size());
  }
  return recs.empty() ? 3 : 0;
}
