#include "ptz/camera.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "ptz/error.hpp"

namespace ptz {

double deg2rad(double deg) { return deg * (std::numbers::pi / 180.0); }
double rad2deg(double rad) { return rad * (180.0 / std::numbers::pi); }

void validate(const ImageSize& size) {
  if (size.width < 2 || size.height < 2)
    throw Error(ErrorCode::InvalidArgument, "image size must be at least 2x2");
}

void validate(const PtzBase& base) {
  const Eigen::Matrix3d& s = base.rotation;
  const double ortho = (s * s.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!base.center.allFinite() || !s.allFinite() || ortho > 1e-9 ||
      std::abs(s.determinant() - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidArgument, "base rotation must be a proper rotation");
}

void validate(const CameraPose& pose) {
  if (!(pose.focal > 0.0) || !std::isfinite(pose.focal))
    throw Error(ErrorCode::InvalidArgument, "focal length must be positive");
  if (!(pose.pan > -180.0 && pose.pan <= 180.0))
    throw Error(ErrorCode::InvalidArgument, "pan must lie in (-180, 180]");
  if (!(pose.tilt > -90.0 && pose.tilt < 90.0))
    throw Error(ErrorCode::InvalidArgument, "tilt must lie in (-90, 90)");
}

double normalize_pan(double deg) {
  double wrapped = std::fmod(deg, 360.0);
  if (wrapped <= -180.0) wrapped += 360.0;
  if (wrapped > 180.0) wrapped -= 360.0;
  return wrapped;
}

Eigen::Matrix3d intrinsic_matrix(const CameraPose& pose, const ImageSize& size) {
  Eigen::Matrix3d k;
  k << pose.focal, 0.0, size.cx(),
       0.0, pose.focal, size.cy(),
       0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d pan_rotation(double pan_deg) {
  const double c = std::cos(deg2rad(pan_deg));
  const double s = std::sin(deg2rad(pan_deg));
  Eigen::Matrix3d q;
  q << c, 0.0, -s,
       0.0, 1.0, 0.0,
       s, 0.0, c;
  return q;
}

Eigen::Matrix3d tilt_rotation(double tilt_deg) {
  const double c = std::cos(deg2rad(tilt_deg));
  const double s = std::sin(deg2rad(tilt_deg));
  Eigen::Matrix3d q;
  q << 1.0, 0.0, 0.0,
       0.0, c, s,
       0.0, -s, c;
  return q;
}

Eigen::Matrix3d ptz_rotation(const CameraPose& pose) {
  return tilt_rotation(pose.tilt) * pan_rotation(pose.pan);
}

Eigen::Vector3d ray_point(const Ray& ray) {
  const double tt = std::tan(deg2rad(ray.theta));
  const double tp = std::tan(deg2rad(ray.phi));
  return {tt, -tp * std::sqrt(tt * tt + 1.0), 1.0};
}

Eigen::Vector3d ray_direction(const Ray& ray) {
  const double t = deg2rad(ray.theta);
  const double p = deg2rad(ray.phi);
  return {std::sin(t) * std::cos(p), -std::sin(p), std::cos(t) * std::cos(p)};
}

Ray direction_to_ray(const Eigen::Vector3d& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || v.z() <= kDepthEpsilon * norm)
    throw Error(ErrorCode::BehindCamera, "direction has non-positive depth");
  return {rad2deg(std::atan2(v.x(), v.z())), rad2deg(std::atan2(-v.y(), std::hypot(v.x(), v.z())))};
}

Eigen::Vector3d optical_axis(const CameraPose& pose) {
  return ray_direction(Ray{pose.pan, pose.tilt});
}

double vector_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

double ray_angle(const Ray& a, const Ray& b) {
  return vector_angle(ray_direction(a), ray_direction(b));
}

namespace {

Pixel dehomogenize_camera(const Eigen::Vector3d& w, const CameraPose& pose, const ImageSize& size) {
  const double norm = w.norm();
  if (!(norm > 0.0) || w.z() <= kDepthEpsilon * norm)
    throw Error(ErrorCode::BehindCamera, "point projects behind the camera");
  return {size.cx() + pose.focal * w.x() / w.z(), size.cy() + pose.focal * w.y() / w.z()};
}

}  // namespace

Pixel project_ray(const CameraPose& pose, const ImageSize& size, const Ray& ray) {
  return dehomogenize_camera(ptz_rotation(pose) * ray_direction(ray), pose, size);
}

Ray back_project(const CameraPose& pose, const ImageSize& size, const Pixel& pixel) {
  const Eigen::Vector3d normalized((pixel.x() - size.cx()) / pose.focal,
                                   (pixel.y() - size.cy()) / pose.focal, 1.0);
  return direction_to_ray(ptz_rotation(pose).transpose() * normalized);
}

Pixel project_world_point(const PtzBase& base, const CameraPose& pose, const ImageSize& size,
                          const Eigen::Vector3d& point) {
  return dehomogenize_camera(ptz_rotation(pose) * base.rotation * (point - base.center), pose, size);
}

Ray world_point_to_ray(const PtzBase& base, const Eigen::Vector3d& point) {
  return direction_to_ray(base.rotation * (point - base.center));
}

Eigen::Matrix3d relative_homography(const CameraPose& pose_a, const CameraPose& pose_b,
                                    const ImageSize& size) {
  const Eigen::Matrix3d h = intrinsic_matrix(pose_b, size) * ptz_rotation(pose_b) *
                            ptz_rotation(pose_a).transpose() *
                            intrinsic_matrix(pose_a, size).inverse();
  if (std::abs(h(2, 2)) < 1e-12)
    throw Error(ErrorCode::Degenerate, "relative homography has vanishing H(2,2)");
  return h / h(2, 2);
}

Eigen::Matrix<double, 2, 5> projection_jacobian(const CameraPose& pose, const ImageSize& /*size*/,
                                                const Ray& ray) {
  const double ct = std::cos(deg2rad(pose.pan)), st = std::sin(deg2rad(pose.pan));
  const double cp = std::cos(deg2rad(pose.tilt)), sp = std::sin(deg2rad(pose.tilt));
  Eigen::Matrix3d q_pan, q_tilt, d_pan, d_tilt;
  q_pan << ct, 0, -st, 0, 1, 0, st, 0, ct;
  d_pan << -st, 0, -ct, 0, 0, 0, ct, 0, -st;
  q_tilt << 1, 0, 0, 0, cp, sp, 0, -sp, cp;
  d_tilt << 0, 0, 0, 0, -sp, cp, 0, -cp, -sp;

  const double t = deg2rad(ray.theta), p = deg2rad(ray.phi);
  const Eigen::Vector3d u(std::sin(t) * std::cos(p), -std::sin(p), std::cos(t) * std::cos(p));
  const Eigen::Vector3d du_theta(std::cos(t) * std::cos(p), 0.0, -std::sin(t) * std::cos(p));
  const Eigen::Vector3d du_phi(-std::sin(t) * std::sin(p), -std::cos(p), -std::cos(t) * std::sin(p));

  const Eigen::Matrix3d rot = q_tilt * q_pan;
  const Eigen::Vector3d w = rot * u;
  if (w.z() <= kDepthEpsilon)
    throw Error(ErrorCode::BehindCamera, "point projects behind the camera");

  Eigen::Matrix<double, 2, 3> dpix_dw;
  dpix_dw << 1.0, 0.0, -w.x() / w.z(), 0.0, 1.0, -w.y() / w.z();
  dpix_dw *= pose.focal / w.z();

  const double to_rad = deg2rad(1.0);
  Eigen::Matrix<double, 2, 5> j;
  j.col(0) = dpix_dw * (q_tilt * d_pan * u) * to_rad;
  j.col(1) = dpix_dw * (d_tilt * q_pan * u) * to_rad;
  j.col(2) = Eigen::Vector2d(w.x() / w.z(), w.y() / w.z());
  j.col(3) = dpix_dw * (rot * du_theta) * to_rad;
  j.col(4) = dpix_dw * (rot * du_phi) * to_rad;
  return j;
}

Eigen::Matrix<double, 2, 5> back_projection_jacobian(const CameraPose& pose, const ImageSize& size,
                                                     const Pixel& pixel) {
  // project(pose, back(pose, p)) = p, so J_ray * d(ray) + J_pose * d(pose) = d(p).
  const Ray ray = back_project(pose, size, pixel);
  const Eigen::Matrix<double, 2, 5> jp = projection_jacobian(pose, size, ray);
  const Eigen::Matrix2d ray_block_inv = jp.rightCols<2>().inverse();
  Eigen::Matrix<double, 2, 5> j;
  j.leftCols<3>() = -ray_block_inv * jp.leftCols<3>();
  j.rightCols<2>() = ray_block_inv;
  return j;
}

Pixel apply_homography(const Eigen::Matrix3d& h, const Pixel& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  if (q.z() <= kDepthEpsilon * q.norm())
    throw Error(ErrorCode::BehindCamera, "homography maps point to infinity");
  return q.hnormalized();
}

}  // namespace ptz
