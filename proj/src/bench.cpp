#include "ptz/bench.hpp"

#include <cmath>
#include <numeric>
#include <optional>

#include "ptz/error.hpp"

namespace ptz {

RelocMap build_reloc_map(const SequenceBundle& sequence, const PipelineConfig& config) {
  validate(config);
  RelocMap map;
  map.is_keyframe.assign(sequence.frames.size(), 0);
  std::vector<CameraPose> poses;
  for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
    const auto& f = sequence.frames[i];
    const auto obs = config.use_player_filter ? filter_player_keypoints(f.observations, f.player_boxes)
                                              : f.observations;
    if (obs.empty()) continue;
    // Observations of real landmarks stand in for a tracker's inlier set.
    Keyframe kf;
    for (const auto& o : obs)
      if (o.true_landmark_id) kf.observations.push_back(o);
    const double ratio = static_cast<double>(kf.observations.size()) / static_cast<double>(obs.size());
    if (kf.observations.size() < 2 || !select_keyframe(f.ground_truth, ratio, poses, config)) continue;
    kf.id = static_cast<int>(map.keyframes.size());
    kf.frame = f.index;
    kf.pose = f.ground_truth;
    std::vector<TrainingExample> examples;
    for (const auto& o : kf.observations) examples.push_back({o.descriptor, back_project(kf.pose, sequence.size, o.pixel)});
    online_update(map.forest, map.reservoir, examples, kf.id, config.forest);
    poses.push_back(kf.pose);
    map.keyframes.push_back(std::move(kf));
    map.is_keyframe[i] = 1;
  }
  if (map.keyframes.size() < 2)
    throw Error(ErrorCode::InvalidArgument,
                "sequence yields " + std::to_string(map.keyframes.size()) + " keyframes, need at least 2");
  return map;
}

std::vector<Observation> inject_outliers(std::span<const Observation> observations, double ratio,
                                         const ImageSize& size, Rng& rng) {
  if (!(ratio >= 0 && ratio <= 1)) throw Error(ErrorCode::InvalidArgument, "outlier ratio must be in [0, 1]");
  std::vector<Observation> out(observations.begin(), observations.end());
  const auto n = out.size();
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    auto& o = out[idx[i]];
    o.pixel = Pixel(rng.uniform(0, size.width), rng.uniform(0, size.height));
    for (Eigen::Index d = 0; d < o.descriptor.size(); ++d) o.descriptor(d) = rng.normal();
    o.true_landmark_id.reset();
  }
  return out;
}

std::vector<RelocRow> run_reloc_bench(const SequenceBundle& sequence, const RelocMap& map,
                                      const PipelineConfig& config, const RelocBenchOptions& options) {
  if (options.trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be at least 1");
  std::vector<std::size_t> held_out;
  for (std::size_t i = 0; i < sequence.frames.size(); ++i)
    if (!map.is_keyframe[i] && !sequence.frames[i].observations.empty()) held_out.push_back(i);
  if (held_out.empty()) throw Error(ErrorCode::InvalidArgument, "no held-out frames");

  const std::size_t nr = options.outlier_ratios.size(), nm = options.methods.size();
  std::vector<std::vector<std::optional<CameraPose>>> est(nr * nm);
  std::vector<CameraPose> truth;
  for (int t = 0; t < options.trials; ++t) {
    Rng pick(options.seed, 0xBE00000000ULL + static_cast<std::uint64_t>(t));
    const auto& f = sequence.frames[held_out[pick.uniform_index(held_out.size())]];
    const auto base = config.use_player_filter ? filter_player_keypoints(f.observations, f.player_boxes)
                                               : f.observations;
    truth.push_back(f.ground_truth);
    for (std::size_t r = 0; r < nr; ++r) {
      const std::uint64_t key = static_cast<std::uint64_t>(t) * 64 + r;
      Rng rng(options.seed, 0xBF00000000ULL + key);
      const auto obs = inject_outliers(base, options.outlier_ratios[r], sequence.size, rng);
      RansacParams ransac = config.ransac;
      ransac.seed = splitmix64(options.seed ^ key);
      for (std::size_t m = 0; m < nm; ++m) {
        std::optional<CameraPose> pose;
        try {
          PoseRansacResult res;
          switch (options.methods[m]) {
            case RelocalizerKind::Forest: res = relocalize_forest(map.forest, obs, sequence.size, ransac); break;
            case RelocalizerKind::Keyframe:
              res = relocalize_keyframe(map.keyframes, obs, sequence.size, ransac, config.ekf.descriptor_match_max_dist);
              break;
            case RelocalizerKind::Nns: res = relocalize_nns(map.reservoir, obs, sequence.size, ransac); break;
            case RelocalizerKind::None: throw Error(ErrorCode::InvalidArgument, "relocalizer none cannot be benchmarked");
          }
          if (res.num_inliers >= ransac.min_inliers) pose = res.pose;
        } catch (const Error& e) {
          if (e.code() == ErrorCode::InvalidArgument) throw;
        }
        est[r * nm + m].push_back(pose);
      }
    }
  }

  std::vector<RelocRow> rows;
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t m = 0; m < nm; ++m)
      rows.push_back({to_string(options.methods[m]), options.outlier_ratios[r],
                      relocalization_correctness(est[r * nm + m], truth), options.trials});
  return rows;
}

}  // namespace ptz
