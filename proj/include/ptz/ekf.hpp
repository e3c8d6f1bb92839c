#pragma once

// Frame-to-frame tracking.
//
// EKF-PTZ: state [pan, tilt, focal, d_pan, d_tilt, d_focal, theta_1, phi_1, ...]
// with a constant-velocity camera and static ray landmarks.
//
// EKF-H: the homography baseline. State [h_0..h_7, velocities, m_1, ...]
// where H = [h0 h1 h2; h3 h4 h5; h6 h7 1] maps points of the mosaic plane
// (the first frame's image plane, extended) to the current frame.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ptz/camera.hpp"
#include "ptz/pose_solvers.hpp"

namespace ptz {

struct EkfParams {
  double meas_noise_px = 0.1;
  double process_noise_angle = 0.001;  // degrees / frame, on angular velocity
  double process_noise_focal = 1.0;    // pixels / frame, on focal velocity
  double init_landmark_angle_std = 0.05;
  double gate_px = 20.0;
  double descriptor_match_max_dist = 2.0;

  // Prior on the first (given) camera pose and on its unknown velocity.
  double init_angle_std = 0.01;
  double init_focal_std = 2.0;
  double init_velocity_angle_std = 0.05;
  double init_velocity_focal_std = 5.0;
};

void validate(const EkfParams& params);

struct Observation {
  Pixel pixel;
  Eigen::VectorXd descriptor;
  // Ground truth for evaluation only. Estimators never read it.
  std::optional<int> true_landmark_id;
};

struct Landmark {
  int id = 0;
  Eigen::VectorXd descriptor;
  int observation_count = 0;
  int miss_count = 0;  // consecutive frames predicted in view but not matched
};

/// Landmark bookkeeping shared by both trackers.
struct LandmarkPolicy {
  int target_matches = 80;   // add new landmarks only while fewer are tracked
  int max_new_per_frame = 40;
  int max_landmarks = 250;   // out-of-view landmarks are evicted beyond this
  int max_misses = 5;
};

struct Match {
  std::size_t landmark;     // slot in the state's landmark list
  std::size_t observation;  // index into the frame's observations
};

struct UpdateDiagnostics {
  int num_matches = 0;
  double mean_innovation = 0.0;     // mean |z - h(x)| before the update, pixels
  std::vector<double> residuals;    // per match, after the update
  double rms = 0.0;                 // sqrt(mean residual^2)
};

struct PtzTrackerState {
  static constexpr int kCameraDim = 6;

  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::vector<Landmark> landmarks;
  int next_landmark_id = 0;

  CameraPose pose() const { return {mean(0), mean(1), mean(2)}; }
  Eigen::Vector3d velocity() const { return mean.segment<3>(3); }
  Ray landmark_ray(std::size_t slot) const {
    return {mean(kCameraDim + 2 * slot), mean(kCameraDim + 2 * slot + 1)};
  }
  static Eigen::Index landmark_index(std::size_t slot) {
    return kCameraDim + 2 * static_cast<Eigen::Index>(slot);
  }
  Eigen::Index dim() const { return mean.size(); }
};

PtzTrackerState make_tracker_state(const CameraPose& pose, const EkfParams& params);

/// Constant-velocity prediction with process noise on the velocity block.
PtzTrackerState ekf_predict(PtzTrackerState state, double dt, const EkfParams& params);

/// Gated greedy descriptor matching of landmarks predicted inside the image.
/// Updates observation/miss counters of the landmarks.
std::vector<Match> associate(PtzTrackerState& state, const ImageSize& size,
                             std::span<const Observation> observations, const EkfParams& params);

/// EKF measurement update with project_ray as the measurement function and
/// a Joseph-form covariance update.
std::pair<PtzTrackerState, UpdateDiagnostics> ekf_update(PtzTrackerState state, const ImageSize& size,
                                                         std::span<const Match> matches,
                                                         std::span<const Observation> observations,
                                                         const EkfParams& params);

/// Back-projects observations at the current pose and appends them as
/// landmarks. Observations that do not back-project are skipped.
PtzTrackerState add_landmarks(PtzTrackerState state, const ImageSize& size,
                              std::span<const Observation> observations, const EkfParams& params);

PtzTrackerState prune_landmarks(PtzTrackerState state, int max_misses);

/// Removes the given landmark slots (and their covariance rows/columns).
PtzTrackerState remove_landmarks(PtzTrackerState state, std::span<const std::size_t> slots);

/// Per-frame bookkeeping after an update: drops landmarks missed more than
/// max_misses times, adds unmatched observations while fewer than
/// target_matches are tracked, and evicts the least observed out-of-view
/// landmarks beyond max_landmarks.
PtzTrackerState manage_landmarks(PtzTrackerState state, const ImageSize& size,
                                 std::span<const Observation> observations, std::span<const Match> matches,
                                 int tracked, const EkfParams& params, const LandmarkPolicy& policy);

/// Same as projection_jacobian; the 2x5 block per landmark measurement.
inline Eigen::Matrix<double, 2, 5> jacobian_projection(const CameraPose& pose, const ImageSize& size,
                                                       const Ray& ray) {
  return projection_jacobian(pose, size, ray);
}

// --- EKF-H baseline -------------------------------------------------------

struct PlaneLandmark {
  int id = 0;
  Eigen::VectorXd descriptor;
  int observation_count = 0;
  int miss_count = 0;
};

struct HomographyTrackerState {
  static constexpr int kParamDim = 8;
  static constexpr int kCameraDim = 16;

  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::vector<PlaneLandmark> landmarks;
  int next_landmark_id = 0;
  Eigen::Matrix<double, 8, 1> process_std;  // per-parameter velocity noise
  double landmark_init_std = 1.0;           // mosaic-plane pixels

  Eigen::Matrix3d homography() const;
  Eigen::Vector2d landmark_point(std::size_t slot) const {
    return mean.segment<2>(kCameraDim + 2 * static_cast<Eigen::Index>(slot));
  }
  static Eigen::Index landmark_index(std::size_t slot) {
    return kCameraDim + 2 * static_cast<Eigen::Index>(slot);
  }
  Eigen::Index dim() const { return mean.size(); }
};

/// H = identity at the first frame. Process and prior noise for the eight
/// parameters are obtained by pushing the pan/tilt/focal noise through the
/// homography at the first pose, pooled per entry type (linear, translation,
/// perspective).
HomographyTrackerState make_homography_state(const CameraPose& first_pose, const ImageSize& size,
                                             const EkfParams& params);

/// Seeds the mosaic plane with first-frame observations.
HomographyTrackerState add_plane_landmarks(HomographyTrackerState state,
                                           std::span<const Observation> observations,
                                           const EkfParams& params);

struct HomographyStepDiagnostics {
  int num_matches = 0;
  int num_inliers = 0;
  std::vector<std::size_t> inlier_observations;  // indices into the frame's observations
  double mean_innovation = 0.0;
  double rms = 0.0;
};

/// Constant-velocity prediction of the homography parameters.
HomographyTrackerState ekfh_predict(HomographyTrackerState state);

/// One EKF-H frame: predict, match, RANSAC outlier rejection, EKF update,
/// landmark creation through H^-1 and pruning. Throws TrackingLost when
/// fewer than four inlier matches remain.
std::pair<HomographyTrackerState, HomographyStepDiagnostics> ekfh_step(
    HomographyTrackerState state, const ImageSize& size, std::span<const Observation> observations,
    const EkfParams& params, const RansacParams& ransac, const LandmarkPolicy& policy);

/// Pan/tilt/focal consistent with a mosaic-to-frame homography, by refining
/// from `first_pose` on a 5x5 grid of first-frame pixels.
CameraPose homography_to_pose(const Eigen::Matrix3d& h, const CameraPose& first_pose, const ImageSize& size);

}  // namespace ptz
