#pragma once

// Pan-tilt-zoom camera model.
//
// A PTZ camera has a fixed location C and a fixed base (tripod) rotation S.
// What changes over time is the pan angle, the tilt angle and the focal
// length. The full projection factors as
//
//     P = K(f) * Q_tilt * Q_pan * S [I | -C]
//
// Landmarks are rays in the tripod frame, parameterized by two angles. The
// tripod frame has X to the right, Y down (image convention) and Z forward.
// A positive pan turns the camera to the right, a positive tilt turns it up.

#include <Eigen/Core>

namespace ptz {

inline constexpr double kDepthEpsilon = 1e-9;

struct ImageSize {
  int width = 1280;
  int height = 720;

  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width && p.y() <= height;
  }
};

/// Fixed part of the camera: location and base rotation (world -> tripod).
struct PtzBase {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// Pan and tilt in degrees, focal length in pixels.
struct CameraPose {
  double pan = 0.0;
  double tilt = 0.0;
  double focal = 1000.0;
};

/// A tripod-frame landmark direction, both angles in degrees.
struct Ray {
  double theta = 0.0;
  double phi = 0.0;
};

using Pixel = Eigen::Vector2d;

double deg2rad(double deg);
double rad2deg(double rad);

void validate(const ImageSize& size);
void validate(const PtzBase& base);
void validate(const CameraPose& pose);

/// Wraps an angle in degrees into (-180, 180].
double normalize_pan(double deg);

Eigen::Matrix3d intrinsic_matrix(const CameraPose& pose, const ImageSize& size);

/// Q_pan: rotation about the tripod Y axis.
Eigen::Matrix3d pan_rotation(double pan_deg);
/// Q_tilt: rotation about the camera X axis.
Eigen::Matrix3d tilt_rotation(double tilt_deg);
/// Q_tilt * Q_pan, maps tripod-frame vectors into the camera frame.
Eigen::Matrix3d ptz_rotation(const CameraPose& pose);

/// Homogeneous point of a ray on the Z = 1 plane:
/// [tan(theta), -tan(phi) * sqrt(tan^2(theta) + 1), 1].
Eigen::Vector3d ray_point(const Ray& ray);
/// Unit-length direction of a ray.
Eigen::Vector3d ray_direction(const Ray& ray);
/// Inverse of ray_direction for any vector with positive Z.
Ray direction_to_ray(const Eigen::Vector3d& tripod_direction);

/// Tripod-frame direction of the optical axis.
Eigen::Vector3d optical_axis(const CameraPose& pose);

/// Great-circle angle between two rays, degrees.
double ray_angle(const Ray& a, const Ray& b);
/// Angle between two direction vectors, degrees. Stable for small angles.
double vector_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

Pixel project_ray(const CameraPose& pose, const ImageSize& size, const Ray& ray);
Ray back_project(const CameraPose& pose, const ImageSize& size, const Pixel& pixel);

Pixel project_world_point(const PtzBase& base, const CameraPose& pose, const ImageSize& size,
                          const Eigen::Vector3d& point);
Ray world_point_to_ray(const PtzBase& base, const Eigen::Vector3d& point);

/// Homography taking frame-a pixels of a ray to frame-b pixels of the same ray,
/// normalized so that H(2, 2) = 1.
Eigen::Matrix3d relative_homography(const CameraPose& pose_a, const CameraPose& pose_b,
                                    const ImageSize& size);

/// Analytic Jacobian of project_ray with respect to
/// [pan, tilt, focal, ray.theta, ray.phi]. Angle columns are per degree.
Eigen::Matrix<double, 2, 5> projection_jacobian(const CameraPose& pose, const ImageSize& size,
                                                const Ray& ray);

/// Jacobian of back_project with respect to [pan, tilt, focal, pixel.x, pixel.y],
/// obtained by inverting the ray block of projection_jacobian at the
/// back-projected ray. Rows are [theta, phi] in degrees.
Eigen::Matrix<double, 2, 5> back_projection_jacobian(const CameraPose& pose, const ImageSize& size,
                                                     const Pixel& pixel);

/// Dehomogenizes H * [p; 1]. Throws BehindCamera when the third coordinate
/// is not positive.
Pixel apply_homography(const Eigen::Matrix3d& h, const Pixel& p);

}  // namespace ptz
