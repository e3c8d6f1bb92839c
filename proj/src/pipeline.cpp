#include "ptz/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json_fields.hpp"
#include "ptz/error.hpp"
#include "ptz/io.hpp"

namespace ptz {

using nlohmann::json;
using detail::Fields;

const char* to_string(TrackerKind kind) { return kind == TrackerKind::EkfPtz ? "ekf_ptz" : "ekf_h"; }

const char* to_string(RelocalizerKind kind) {
  switch (kind) {
    case RelocalizerKind::Forest: return "forest";
    case RelocalizerKind::Keyframe: return "keyframe";
    case RelocalizerKind::Nns: return "nns";
    case RelocalizerKind::None: return "none";
  }
  return "?";
}

const char* to_string(FrameStatus status) {
  switch (status) {
    case FrameStatus::Tracked: return "tracked";
    case FrameStatus::Lost: return "lost";
    case FrameStatus::Relocalized: return "relocalized";
  }
  return "?";
}

void validate(const PipelineConfig& c) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "pipeline: " + what); };
  if (!(c.keyframe_min_angle > 0)) bad("keyframe_min_angle must be positive");
  if (!(c.keyframe_min_inlier_ratio > 0 && c.keyframe_min_inlier_ratio <= 1)) bad("keyframe_min_inlier_ratio must be in (0, 1]");
  if (c.lost_min_matches < 1) bad("lost_min_matches must be at least 1");
  if (!(c.lost_max_innovation > 0)) bad("lost_max_innovation must be positive");
  if (!(c.reloc_covariance_scale >= 1)) bad("reloc_covariance_scale must be at least 1");
  const auto& p = c.landmarks;
  if (p.target_matches < 1 || p.max_new_per_frame < 0 || p.max_landmarks < 1 || p.max_misses < 0)
    bad("invalid landmark policy");
  validate(c.ekf);
  validate(c.forest);
  validate(c.ransac);
}

void apply_seed(PipelineConfig& config, std::uint64_t seed) {
  config.forest.seed = seed;
  config.ransac.seed = seed;
}

// --- config JSON -----------------------------------------------------------

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  Fields top(j, "");
  top.ignore("preset");
  top.ignore("description");
  std::string tracker = to_string(c.tracker), reloc = to_string(c.relocalizer);
  top.read("tracker", tracker);
  if (tracker == "ekf_ptz") c.tracker = TrackerKind::EkfPtz;
  else if (tracker == "ekf_h") c.tracker = TrackerKind::EkfH;
  else Fields::fail("tracker", "expected \"ekf_ptz\" or \"ekf_h\"");
  top.read("relocalizer", reloc);
  if (reloc == "forest") c.relocalizer = RelocalizerKind::Forest;
  else if (reloc == "keyframe") c.relocalizer = RelocalizerKind::Keyframe;
  else if (reloc == "nns") c.relocalizer = RelocalizerKind::Nns;
  else if (reloc == "none") c.relocalizer = RelocalizerKind::None;
  else Fields::fail("relocalizer", "expected forest, keyframe, nns or none");
  top.read("keyframe_min_angle", c.keyframe_min_angle);
  top.read("keyframe_min_inlier_ratio", c.keyframe_min_inlier_ratio);
  top.read("lost_min_matches", c.lost_min_matches);
  top.read("lost_max_innovation", c.lost_max_innovation);
  top.read("use_player_filter", c.use_player_filter);
  top.read("reloc_covariance_scale", c.reloc_covariance_scale);
  if (const auto* e = top.child("ekf")) {
    Fields f(*e, "ekf");
    f.read("meas_noise_px", c.ekf.meas_noise_px);
    f.read("process_noise_angle", c.ekf.process_noise_angle);
    f.read("process_noise_focal", c.ekf.process_noise_focal);
    f.read("init_landmark_angle_std", c.ekf.init_landmark_angle_std);
    f.read("gate_px", c.ekf.gate_px);
    f.read("descriptor_match_max_dist", c.ekf.descriptor_match_max_dist);
    f.read("init_angle_std", c.ekf.init_angle_std);
    f.read("init_focal_std", c.ekf.init_focal_std);
    f.read("init_velocity_angle_std", c.ekf.init_velocity_angle_std);
    f.read("init_velocity_focal_std", c.ekf.init_velocity_focal_std);
    f.finish();
  }
  if (const auto* e = top.child("forest")) {
    Fields f(*e, "forest");
    f.read("num_trees_initial", c.forest.num_trees_initial);
    f.read("max_depth", c.forest.max_depth);
    f.read("min_samples_leaf", c.forest.min_samples_leaf);
    f.read("candidate_splits_per_node", c.forest.candidate_splits_per_node);
    f.read("correctness_angle_deg", c.forest.correctness_angle_deg);
    f.read("correctness_ratio", c.forest.correctness_ratio);
    f.read("max_trees", c.forest.max_trees);
    f.read("seed", c.forest.seed);
    f.finish();
  }
  if (const auto* e = top.child("ransac")) {
    Fields f(*e, "ransac");
    f.read("max_iterations", c.ransac.max_iterations);
    f.read("inlier_threshold", c.ransac.inlier_threshold);
    f.read("min_inliers", c.ransac.min_inliers);
    f.read("confidence", c.ransac.confidence);
    f.read("early_exit", c.ransac.early_exit);
    f.read("seed", c.ransac.seed);
    f.finish();
  }
  if (const auto* e = top.child("landmarks")) {
    Fields f(*e, "landmarks");
    f.read("target_matches", c.landmarks.target_matches);
    f.read("max_new_per_frame", c.landmarks.max_new_per_frame);
    f.read("max_landmarks", c.landmarks.max_landmarks);
    f.read("max_misses", c.landmarks.max_misses);
    f.finish();
  }
  top.finish();
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  return c;
}

json to_json(const PipelineConfig& c) {
  return {
      {"tracker", to_string(c.tracker)},
      {"relocalizer", to_string(c.relocalizer)},
      {"keyframe_min_angle", c.keyframe_min_angle},
      {"keyframe_min_inlier_ratio", c.keyframe_min_inlier_ratio},
      {"lost_min_matches", c.lost_min_matches},
      {"lost_max_innovation", c.lost_max_innovation},
      {"use_player_filter", c.use_player_filter},
      {"reloc_covariance_scale", c.reloc_covariance_scale},
      {"ekf",
       {{"meas_noise_px", c.ekf.meas_noise_px},
        {"process_noise_angle", c.ekf.process_noise_angle},
        {"process_noise_focal", c.ekf.process_noise_focal},
        {"init_landmark_angle_std", c.ekf.init_landmark_angle_std},
        {"gate_px", c.ekf.gate_px},
        {"descriptor_match_max_dist", c.ekf.descriptor_match_max_dist},
        {"init_angle_std", c.ekf.init_angle_std},
        {"init_focal_std", c.ekf.init_focal_std},
        {"init_velocity_angle_std", c.ekf.init_velocity_angle_std},
        {"init_velocity_focal_std", c.ekf.init_velocity_focal_std}}},
      {"forest",
       {{"num_trees_initial", c.forest.num_trees_initial},
        {"max_depth", c.forest.max_depth},
        {"min_samples_leaf", c.forest.min_samples_leaf},
        {"candidate_splits_per_node", c.forest.candidate_splits_per_node},
        {"correctness_angle_deg", c.forest.correctness_angle_deg},
        {"correctness_ratio", c.forest.correctness_ratio},
        {"max_trees", c.forest.max_trees},
        {"seed", c.forest.seed}}},
      {"ransac",
       {{"max_iterations", c.ransac.max_iterations},
        {"inlier_threshold", c.ransac.inlier_threshold},
        {"min_inliers", c.ransac.min_inliers},
        {"confidence", c.ransac.confidence},
        {"early_exit", c.ransac.early_exit},
        {"seed", c.ransac.seed}}},
      {"landmarks",
       {{"target_matches", c.landmarks.target_matches},
        {"max_new_per_frame", c.landmarks.max_new_per_frame},
        {"max_landmarks", c.landmarks.max_landmarks},
        {"max_misses", c.landmarks.max_misses}}},
  };
}

// --- building blocks -------------------------------------------------------

std::vector<Observation> filter_player_keypoints(std::span<const Observation> observations,
                                                 std::span<const PixelBox> boxes) {
  std::vector<Observation> out;
  out.reserve(observations.size());
  for (const auto& o : observations) {
    const bool inside = std::any_of(boxes.begin(), boxes.end(), [&](const PixelBox& b) { return b.contains(o.pixel); });
    if (!inside) out.push_back(o);
  }
  return out;
}

bool select_keyframe(const CameraPose& pose, double inlier_ratio, std::span<const CameraPose> keyframe_poses,
                     const PipelineConfig& config) {
  if (inlier_ratio < config.keyframe_min_inlier_ratio) return false;
  const Eigen::Vector3d axis = optical_axis(pose);
  for (const auto& k : keyframe_poses)
    if (vector_angle(axis, optical_axis(k)) < config.keyframe_min_angle) return false;
  return true;
}

bool detect_lost(int inliers, double mean_innovation, const PipelineConfig& config) {
  return inliers < config.lost_min_matches || mean_innovation > config.lost_max_innovation;
}

// --- frame loop ------------------------------------------------------------

namespace {

struct Step {
  bool ok = false;
  int matches = 0;
  int inliers = 0;
  double innovation = 0.0;
  double rms = 0.0;
  std::vector<std::size_t> inlier_obs;
  std::vector<PixelRay> inlier_pairs;  // EKF-PTZ: pixel and landmark ray, for keyframe refinement
};

class Runner {
 public:
  Runner(const SequenceBundle& seq, const PipelineConfig& cfg, const CameraPose& first)
      : seq_(seq), cfg_(cfg), first_(first) {}

  TrackResult run() {
    validate(cfg_);
    validate(first_);
    if (seq_.frames.empty()) throw Error(ErrorCode::InitializationFailed, "sequence has no frames");
    const auto obs0 = observations_of(seq_.frames[0]);
    if (static_cast<int>(obs0.size()) < cfg_.lost_min_matches)
      throw Error(ErrorCode::InitializationFailed,
                  "frame 0 has " + std::to_string(obs0.size()) + " observations, need " +
                      std::to_string(cfg_.lost_min_matches));

    if (ptz()) {
      ptz_ = add_landmarks(make_tracker_state(first_, cfg_.ekf), seq_.size, obs0, cfg_.ekf);
    } else {
      h_ = add_plane_landmarks(make_homography_state(first_, seq_.size, cfg_.ekf), obs0, cfg_.ekf);
    }

    FrameRecord r0;
    r0.index = seq_.frames[0].index;
    r0.estimate = first_;
    r0.matches = r0.inliers = static_cast<int>(obs0.size());
    r0.num_landmarks = num_landmarks();
    std::vector<std::size_t> all(obs0.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    maybe_keyframe(r0, first_, 1.0, obs0, all);
    result_.frames.push_back(r0);
    last_ = first_;

    for (std::size_t i = 1; i < seq_.frames.size(); ++i) frame(seq_.frames[i]);
    return std::move(result_);
  }

 private:
  bool ptz() const { return cfg_.tracker == TrackerKind::EkfPtz; }

  int num_landmarks() const {
    return static_cast<int>(ptz() ? ptz_.landmarks.size() : h_.landmarks.size());
  }

  std::vector<Observation> observations_of(const FrameObservations& f) const {
    if (cfg_.use_player_filter) return filter_player_keypoints(f.observations, f.player_boxes);
    return f.observations;
  }

  Step step_ptz(std::span<const Observation> obs) {
    Step s;
    const auto predicted = ekf_predict(ptz_, 1.0, cfg_.ekf);
    auto candidate = predicted;
    const auto matches = associate(candidate, seq_.size, obs, cfg_.ekf);
    s.matches = static_cast<int>(matches.size());
    if (matches.empty()) {
      hold(predicted);
      return s;
    }
    auto [updated, diag] = ekf_update(std::move(candidate), seq_.size, matches, obs, cfg_.ekf);
    for (std::size_t k = 0; k < matches.size(); ++k) {
      if (!(diag.residuals[k] < cfg_.ransac.inlier_threshold)) continue;
      s.inlier_obs.push_back(matches[k].observation);
      s.inlier_pairs.push_back({obs[matches[k].observation].pixel, updated.landmark_ray(matches[k].landmark)});
    }
    s.inliers = static_cast<int>(s.inlier_obs.size());
    s.innovation = diag.mean_innovation;
    s.rms = diag.rms;
    if (detect_lost(s.inliers, s.innovation, cfg_)) {
      hold(predicted);
      return s;
    }
    ptz_ = manage_landmarks(std::move(updated), seq_.size, obs, matches, s.inliers, cfg_.ekf, cfg_.landmarks);
    s.ok = true;
    return s;
  }

  Step step_h(std::span<const Observation> obs) {
    Step s;
    try {
      auto [next, diag] = ekfh_step(h_, seq_.size, obs, cfg_.ekf, cfg_.ransac, cfg_.landmarks);
      s.matches = diag.num_matches;
      s.inliers = diag.num_inliers;
      s.innovation = diag.mean_innovation;
      s.rms = diag.rms;
      s.inlier_obs = std::move(diag.inlier_observations);
      if (!detect_lost(s.inliers, s.innovation, cfg_)) {
        h_ = std::move(next);
        s.ok = true;
        return s;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TrackingLost) throw;
    }
    h_ = ekfh_predict(std::move(h_));
    h_.mean.segment<8>(8).setZero();
    return s;
  }

  // A failed frame keeps the prediction but stops extrapolating the motion.
  void hold(PtzTrackerState predicted) {
    ptz_ = std::move(predicted);
    ptz_.mean.segment<3>(3).setZero();
  }

  CameraPose current_pose() {
    if (ptz()) return ptz_.pose();
    try {
      return homography_to_pose(h_.homography(), first_, seq_.size);
    } catch (const Error&) {
      return last_;
    }
  }

  void maybe_keyframe(FrameRecord& rec, const CameraPose& pose, double ratio, std::span<const Observation> obs,
                      std::span<const std::size_t> inliers) {
    if (!select_keyframe(pose, ratio, keyframe_poses_, cfg_)) return;
    Keyframe kf;
    kf.id = static_cast<int>(keyframes_.size());
    kf.frame = rec.index;
    kf.pose = pose;
    std::vector<TrainingExample> examples;
    for (auto o : inliers) {
      kf.observations.push_back(obs[o]);
      try {
        examples.push_back({obs[o].descriptor, back_project(pose, seq_.size, obs[o].pixel)});
      } catch (const Error&) {
      }
    }
    if (examples.empty()) return;
    result_.forest_updates.push_back(online_update(forest_, reservoir_, examples, kf.id, cfg_.forest));
    keyframe_poses_.push_back(pose);
    keyframes_.push_back(std::move(kf));
    result_.keyframes.push_back(rec.index);
    rec.keyframe = true;
  }

  void reset_to(const CameraPose& pose) {
    const double k = cfg_.reloc_covariance_scale;
    if (ptz()) {
      const auto prior = make_tracker_state(pose, cfg_.ekf);
      constexpr int c = PtzTrackerState::kCameraDim;
      ptz_.mean.head<c>() = prior.mean;
      ptz_.covariance.topRows<c>().setZero();
      ptz_.covariance.leftCols<c>().setZero();
      ptz_.covariance.topLeftCorner<c, c>() = k * prior.covariance;
      for (auto& l : ptz_.landmarks) l.miss_count = 0;
    } else {
      const auto prior = make_homography_state(first_, seq_.size, cfg_.ekf);
      constexpr int c = HomographyTrackerState::kCameraDim;
      const Eigen::Matrix3d h = relative_homography(first_, pose, seq_.size);
      h_.mean.head<c>().setZero();
      h_.mean.head<8>() << h(0, 0), h(0, 1), h(0, 2), h(1, 0), h(1, 1), h(1, 2), h(2, 0), h(2, 1);
      h_.covariance.topRows<c>().setZero();
      h_.covariance.leftCols<c>().setZero();
      h_.covariance.topLeftCorner<c, c>() = k * prior.covariance.topLeftCorner<c, c>();
      for (auto& l : h_.landmarks) l.miss_count = 0;
    }
  }

  bool relocalize(FrameRecord& rec, std::span<const Observation> obs) {
    RelocalizationEvent ev;
    ev.frame = rec.index;
    try {
      PoseRansacResult r;
      switch (cfg_.relocalizer) {
        case RelocalizerKind::Forest: r = relocalize_forest(forest_, obs, seq_.size, cfg_.ransac); break;
        case RelocalizerKind::Keyframe:
          r = relocalize_keyframe(keyframes_, obs, seq_.size, cfg_.ransac, cfg_.ekf.descriptor_match_max_dist);
          break;
        case RelocalizerKind::Nns: r = relocalize_nns(reservoir_, obs, seq_.size, cfg_.ransac); break;
        case RelocalizerKind::None: return false;
      }
      ev.pose = r.pose;
      ev.inliers = r.num_inliers;
      ev.success = r.num_inliers >= cfg_.ransac.min_inliers;
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::NotEnoughInliers:
        case ErrorCode::Degenerate:
        case ErrorCode::NoSolution:
        case ErrorCode::Inconsistent:
        case ErrorCode::SingularNormalEquations:
        case ErrorCode::BehindCamera:
          break;
        default:
          throw;
      }
    }
    result_.relocalizations.push_back(ev);
    if (!ev.success) return false;
    reset_to(ev.pose);
    rec.inliers = ev.inliers;
    rec.estimate = ev.pose;
    return true;
  }

  void frame(const FrameObservations& f) {
    const auto obs = observations_of(f);
    FrameRecord rec;
    rec.index = f.index;
    rec.estimate = last_;

    bool tracked = false;
    if (!lost_ || cfg_.relocalizer == RelocalizerKind::None) {
      Step s = ptz() ? step_ptz(obs) : step_h(obs);
      rec.matches = s.matches;
      rec.inliers = s.inliers;
      rec.mean_innovation = s.innovation;
      rec.rms = s.rms;
      rec.estimate = current_pose();
      tracked = s.ok;
      if (tracked) {
        CameraPose kf_pose = rec.estimate;
        if (ptz() && s.inlier_pairs.size() >= 2) {
          try {
            kf_pose = refine_pose(rec.estimate, s.inlier_pairs, seq_.size);
          } catch (const Error&) {
          }
        }
        const double ratio = s.matches ? static_cast<double>(s.inliers) / s.matches : 0.0;
        maybe_keyframe(rec, kf_pose, ratio, obs, s.inlier_obs);
      }
    }

    if (tracked) {
      rec.status = FrameStatus::Tracked;
      lost_ = false;
    } else {
      lost_ = true;
      rec.status = FrameStatus::Lost;
      if (cfg_.relocalizer != RelocalizerKind::None && relocalize(rec, obs)) {
        rec.status = FrameStatus::Relocalized;
        lost_ = false;
      }
    }
    last_ = rec.estimate;
    rec.num_landmarks = num_landmarks();
    result_.frames.push_back(rec);
  }

  const SequenceBundle& seq_;
  const PipelineConfig& cfg_;
  CameraPose first_;
  CameraPose last_;
  bool lost_ = false;

  PtzTrackerState ptz_;
  HomographyTrackerState h_;

  Forest forest_;
  ExampleReservoir reservoir_;
  std::vector<Keyframe> keyframes_;
  std::vector<CameraPose> keyframe_poses_;
  TrackResult result_;
};

}  // namespace

TrackResult run_tracking(const SequenceBundle& sequence, const PipelineConfig& config, const CameraPose& first_pose) {
  return Runner(sequence, config, first_pose).run();
}

void write_track_csv(const TrackResult& result, const SequenceBundle& sequence, const std::filesystem::path& path) {
  if (result.frames.size() != sequence.frames.size())
    throw Error(ErrorCode::LengthMismatch, "track result and sequence differ in length");
  std::ostringstream out;
  out << "idx,status,pan,tilt,focal,gt_pan,gt_tilt,gt_focal,err_pan,err_tilt,err_focal,matches,inliers,rms,keyframe\n";
  char buf[512];
  for (std::size_t i = 0; i < result.frames.size(); ++i) {
    const auto& r = result.frames[i];
    const auto& e = r.estimate;
    const auto& g = sequence.frames[i].ground_truth;
    std::snprintf(buf, sizeof buf, "%d,%s,%.9f,%.9f,%.6f,%.9f,%.9f,%.6f,%.9f,%.9f,%.6f,%d,%d,%.6f,%d\n", r.index,
                  to_string(r.status), e.pan, e.tilt, e.focal, g.pan, g.tilt, g.focal, std::abs(e.pan - g.pan),
                  std::abs(e.tilt - g.tilt), std::abs(e.focal - g.focal), r.matches, r.inliers, r.rms,
                  r.keyframe ? 1 : 0);
    out << buf;
  }
  write_file_atomic(path, out.str());
}

}  // namespace ptz
