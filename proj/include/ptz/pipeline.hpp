#pragma once

// Full system: player-box filtering, frame-to-frame tracking (EKF-PTZ or the
// EKF-H baseline), keyframes feeding the pan-tilt forest, lost detection and
// relocalization.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptz/camera.hpp"
#include "ptz/ekf.hpp"
#include "ptz/forest.hpp"
#include "ptz/pose_solvers.hpp"
#include "ptz/simulator.hpp"

namespace ptz {

enum class TrackerKind { EkfPtz, EkfH };
enum class RelocalizerKind { Forest, Keyframe, Nns, None };

const char* to_string(TrackerKind kind);
const char* to_string(RelocalizerKind kind);

struct PipelineConfig {
  TrackerKind tracker = TrackerKind::EkfPtz;
  RelocalizerKind relocalizer = RelocalizerKind::Forest;
  double keyframe_min_angle = 5.0;          // degrees between optical axes
  double keyframe_min_inlier_ratio = 0.6;
  int lost_min_matches = 5;
  double lost_max_innovation = 20.0;        // pixels, strict
  bool use_player_filter = true;
  double reloc_covariance_scale = 10.0;     // prior variance multiplier after relocalization
  EkfParams ekf;
  ForestParams forest;
  RansacParams ransac;          // relocalization and EKF-H outlier rejection
  LandmarkPolicy landmarks;
};

void validate(const PipelineConfig& config);

/// Strict JSON reader; "preset" and "description" keys are ignored.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& config);
/// Sets every seed in the config (forest and RANSAC).
void apply_seed(PipelineConfig& config, std::uint64_t seed);

enum class FrameStatus { Tracked, Lost, Relocalized };
const char* to_string(FrameStatus status);

struct FrameRecord {
  int index = 0;
  FrameStatus status = FrameStatus::Tracked;
  CameraPose estimate;  // while lost: the last predicted pose
  int matches = 0;
  int inliers = 0;
  double rms = 0.0;
  double mean_innovation = 0.0;
  bool keyframe = false;
  int num_landmarks = 0;
};

struct RelocalizationEvent {
  int frame = 0;
  bool success = false;
  CameraPose pose;
  int inliers = 0;
};

struct TrackResult {
  std::vector<FrameRecord> frames;
  std::vector<int> keyframes;  // frame indices
  std::vector<RelocalizationEvent> relocalizations;
  std::vector<UpdateDecision> forest_updates;
};

/// Drops observations inside any box (closed rectangles), keeping order.
std::vector<Observation> filter_player_keypoints(std::span<const Observation> observations,
                                                 std::span<const PixelBox> boxes);

/// Good tracking (inlier ratio) and a novel optical axis with respect to
/// every existing keyframe.
bool select_keyframe(const CameraPose& pose, double inlier_ratio, std::span<const CameraPose> keyframe_poses,
                     const PipelineConfig& config);

/// Lost when inliers < lost_min_matches or mean innovation > lost_max_innovation.
bool detect_lost(int inliers, double mean_innovation, const PipelineConfig& config);

/// Runs the system over a bundle. Throws InitializationFailed when frame 0
/// has fewer than lost_min_matches (filtered) observations.
TrackResult run_tracking(const SequenceBundle& sequence, const PipelineConfig& config, const CameraPose& first_pose);

/// Per-frame CSV: idx,status,pan,tilt,focal,gt_pan,gt_tilt,gt_focal,
/// err_pan,err_tilt,err_focal,matches,inliers,rms,keyframe
void write_track_csv(const TrackResult& result, const SequenceBundle& sequence, const std::filesystem::path& path);

}  // namespace ptz
