#pragma once

// Pose estimation from pixel-ray correspondences: the two-point minimal
// solver, Gauss-Newton refinement of the reprojection error, and RANSAC
// wrappers for poses and for plain homographies.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ptz/camera.hpp"

namespace ptz {

struct PixelRay {
  Pixel pixel;
  Ray ray;
};

/// A pixel with one or more candidate rays (one per forest tree, or a single
/// exact ray).
struct Correspondence {
  Pixel pixel;
  std::vector<Ray> candidates;
};

struct PixelPair {
  Pixel from;
  Pixel to;
};

struct RansacParams {
  int max_iterations = 500;
  double inlier_threshold = 3.0;  // pixels
  int min_inliers = 10;
  double confidence = 0.999;
  bool early_exit = true;
  std::uint64_t seed = 0;
};

void validate(const RansacParams& params);

inline constexpr double kMinFocal = 100.0;
inline constexpr double kMaxFocal = 20000.0;
inline constexpr double kTwoPointTolerance = 1e-6;

/// Recovers (pan, tilt, focal) from two pixel-ray pairs.
///
/// The focal length is a root of g(f) = angle(K_f^-1 p1, K_f^-1 p2) minus
/// the angle between the two rays on [kMinFocal, kMaxFocal]. Roots are
/// bracketed by a log-spaced scan and bisected. Pan and tilt then follow in
/// closed form from the first pair, and the root that best reproduces the
/// second pair wins. `max_residual` bounds the reprojection error of
/// the second pair; the default accepts only exact (noise-free) input.
///
/// Throws Degenerate for coincident pixels or rays, NoSolution when the
/// bracket does not contain a root, Inconsistent when the second pair is
/// not reproduced.
CameraPose solve_two_point(const PixelRay& first, const PixelRay& second, const ImageSize& size,
                           double max_residual = 10.0 * kTwoPointTolerance);

/// g(f) from solve_two_point, in degrees. Exposed for testing.
double two_point_angle_gap(const PixelRay& first, const PixelRay& second, const ImageSize& size,
                           double focal);

struct RefineSummary {
  int iterations = 0;
  std::vector<double> cost_history;  // cost after every accepted step, starting with the initial cost
  double initial_cost() const { return cost_history.front(); }
  double final_cost() const { return cost_history.back(); }
};

/// Minimizes sum |p_i - project_ray(pose, r_i)|^2 with damped Gauss-Newton
/// (Levenberg-Marquardt) over pan, tilt and focal.
/// Throws SingularNormalEquations when the correspondences do not constrain
/// all three parameters.
CameraPose refine_pose(const CameraPose& initial, std::span<const PixelRay> correspondences,
                       const ImageSize& size, RefineSummary* summary = nullptr);

double reprojection_cost(const CameraPose& pose, std::span<const PixelRay> correspondences,
                         const ImageSize& size);

/// Reprojection error of a ray, or +inf if it falls behind the camera.
double reprojection_error(const CameraPose& pose, const ImageSize& size, const Pixel& pixel,
                          const Ray& ray);

struct PoseRansacResult {
  CameraPose pose;
  std::vector<char> inliers;
  std::vector<int> best_candidate;  // index into candidates, per correspondence
  int num_inliers = 0;
  int iterations = 0;
};

/// Robust pose from correspondences with candidate rays. Hypotheses come from
/// the two-point solver on one uniformly drawn candidate per sampled
/// correspondence; scoring uses each correspondence's best candidate. All
/// samples are drawn up front from `params.seed`, and ties go to the earliest
/// hypothesis.
PoseRansacResult ransac_pose(std::span<const Correspondence> correspondences, const ImageSize& size,
                             const RansacParams& params);

/// Normalized direct linear transform on four or more pairs.
Eigen::Matrix3d fit_homography(std::span<const PixelPair> pairs);

struct HomographyRansacResult {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  std::vector<char> inliers;
  int num_inliers = 0;
};

/// 4-point RANSAC with a symmetric transfer inlier test, then a DLT refit on
/// the inliers. Samples with three collinear points are skipped.
HomographyRansacResult ransac_homography(std::span<const PixelPair> pairs, const RansacParams& params);

}  // namespace ptz
