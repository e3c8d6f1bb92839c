#include <doctest.h>

#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "ptz/camera.hpp"
#include "ptz/error.hpp"
#include "ptz/random.hpp"

using namespace ptz;

namespace {

const ImageSize k720{1280, 720};

// Literal matrix composition K * Q_tilt * Q_pan * ray_point in long double,
// kept separate from the library path which works on unit directions.
Pixel oracle_project(const CameraPose& pose, const ImageSize& size, const Ray& ray) {
  using ld = long double;
  const ld pi = 3.141592653589793238462643383279502884L;
  const ld t = static_cast<ld>(ray.theta) * pi / 180, p = static_cast<ld>(ray.phi) * pi / 180;
  const ld pan = static_cast<ld>(pose.pan) * pi / 180, tilt = static_cast<ld>(pose.tilt) * pi / 180;
  const ld v[3] = {std::tan(t), -std::tan(p) * std::sqrt(std::tan(t) * std::tan(t) + 1), 1};
  const ld cp = std::cos(pan), sp = std::sin(pan), ct = std::cos(tilt), st = std::sin(tilt);
  const ld a[3] = {cp * v[0] - sp * v[2], v[1], sp * v[0] + cp * v[2]};
  const ld b[3] = {a[0], ct * a[1] + st * a[2], -st * a[1] + ct * a[2]};
  const ld f = pose.focal;
  return {static_cast<double>(f * b[0] / b[2] + size.width / 2.0L),
          static_cast<double>(f * b[1] / b[2] + size.height / 2.0L)};
}

CameraPose random_pose(Rng& rng) {
  return {rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(500, 5000)};
}

// A ray that lands inside the image of `pose`.
Ray random_visible_ray(const CameraPose& pose, const ImageSize& size, Rng& rng) {
  for (;;) {
    const Pixel p(rng.uniform(0, size.width), rng.uniform(0, size.height));
    try {
      return back_project(pose, size, p);
    } catch (const Error&) {
      // Pixel sees beyond the Z = 1 hemisphere; draw again.
    }
  }
}

}  // namespace

TEST_CASE("intrinsic matrix") {
  Eigen::Matrix3d expected;
  expected << 2000, 0, 640, 0, 2000, 360, 0, 0, 1;
  CHECK(intrinsic_matrix({0, 0, 2000}, k720).isApprox(expected));

  expected << 1, 0, 1, 0, 1, 1, 0, 0, 1;
  CHECK(intrinsic_matrix({0, 0, 1}, {2, 2}).isApprox(expected));

  const auto k = intrinsic_matrix({0, 0, 3500}, {1920, 1080});
  CHECK(k(0, 2) == 960);
  CHECK(k(1, 2) == 540);
}

TEST_CASE("pan and tilt rotations are proper and identity at zero") {
  Rng rng(1);
  CHECK(pan_rotation(0).isIdentity(0));
  CHECK(tilt_rotation(0).isIdentity(0));
  for (int i = 0; i < 100; ++i) {
    const double angle = rng.uniform(-180, 180);
    for (const auto& q : {pan_rotation(angle), tilt_rotation(angle)}) {
      CHECK((q * q.transpose()).isIdentity(1e-12));
      CHECK(q.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("ray on the optical axis projects to the principal point") {
  const auto p = project_ray({10, -5, 2000}, k720, {10, -5});
  CHECK(std::abs(p.x() - 640) < 1e-9);
  CHECK(std::abs(p.y() - 360) < 1e-9);

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto pose = random_pose(rng);
    const auto q = project_ray(pose, k720, {pose.pan, pose.tilt});
    CHECK((q - Pixel(640, 360)).norm() < 1e-9);
  }
}

TEST_CASE("project_ray golden values") {
  // Frozen from a 40-digit evaluation of K * Q_tilt * Q_pan * ray_point.
  const auto a = project_ray({0, 0, 1500}, k720, {1, 0});
  CHECK(a.x() == doctest::Approx(666.18259739232637864769).epsilon(1e-13));
  CHECK(a.y() == doctest::Approx(360.0).epsilon(1e-13));

  const auto b = project_ray({10, -5, 2000}, k720, {14, -8});
  CHECK(b.x() == doctest::Approx(778.67852453209030432702).epsilon(1e-13));
  CHECK(b.y() == doctest::Approx(465.49046553879536030416).epsilon(1e-13));
}

TEST_CASE("project_ray agrees with the literal composition") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto pose = random_pose(rng);
    const auto ray = random_visible_ray(pose, k720, rng);
    CHECK((project_ray(pose, k720, ray) - oracle_project(pose, k720, ray)).norm() < 1e-7);
  }
}

TEST_CASE("back_project inverts project_ray") {
  const auto axis = back_project({7, 3, 1800}, k720, {640, 360});
  CHECK(axis.theta == doctest::Approx(7).epsilon(1e-12));
  CHECK(axis.phi == doctest::Approx(3).epsilon(1e-12));

  const auto r = back_project({0, 0, 1500}, k720, {666.18259739232637864769, 360});
  CHECK(std::abs(r.theta - 1.0) < 1e-6);
  CHECK(std::abs(r.phi) < 1e-6);

  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto pose = random_pose(rng);
    const Ray ray{rng.uniform(pose.pan - 10, pose.pan + 10), rng.uniform(pose.tilt - 8, pose.tilt + 8)};
    const auto back = back_project(pose, k720, project_ray(pose, k720, ray));
    CHECK(std::abs(back.theta - ray.theta) < 1e-9);
    CHECK(std::abs(back.phi - ray.phi) < 1e-9);
  }
}

TEST_CASE("positive tilt looks up, positive pan looks right") {
  // Ray above the axis appears above the principal point (smaller y).
  CHECK(project_ray({0, 0, 1000}, k720, {0, 2}).y() < 360);
  CHECK(project_ray({0, 0, 1000}, k720, {2, 0}).x() > 640);
  // After panning right the same ray moves left in the image.
  CHECK(project_ray({5, 0, 1000}, k720, {2, 0}).x() < 640);
}

TEST_CASE("rays behind the camera are rejected") {
  CHECK_THROWS_AS(project_ray({0, 0, 1000}, k720, {179, 0}), Error);
  try {
    back_project({0, 0, 1000}, {2, 2}, {1, 1});  // fine
    project_ray({0, 0, 1000}, k720, {-120, 0});
    FAIL("expected BehindCamera");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BehindCamera);
  }
  CHECK_THROWS_AS(world_point_to_ray({}, {0, 0, -1}), Error);
}

TEST_CASE("world points and the factorized model") {
  PtzBase identity;
  const auto p = project_world_point(identity, {0, 0, 1500}, k720, {0, 0, 1});
  CHECK((p - Pixel(640, 360)).norm() < 1e-12);

  const auto r0 = world_point_to_ray(identity, {0, 0, 5});
  CHECK(r0.theta == 0);
  CHECK(r0.phi == 0);
  const auto r3 = world_point_to_ray(identity, {std::tan(deg2rad(3)), 0, 1});
  CHECK(r3.theta == doctest::Approx(3).epsilon(1e-12));
  CHECK(std::abs(r3.phi) < 1e-12);

  // Golden value: C = (0.5, -12, 5), S maps world Z-up to tripod Y-down.
  PtzBase court;
  court.center = {0.5, -12, 5};
  court.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  const auto g = project_world_point(court, {8.5, -20, 2200}, k720, {3, 2.5, 0});
  CHECK(g.x() == doctest::Approx(686.63985661629924094877).epsilon(1e-12));
  CHECK(g.y() == doctest::Approx(312.87339323564868173080).epsilon(1e-12));

  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    PtzBase base;
    base.center = {rng.uniform(-5, 5), rng.uniform(-20, -10), rng.uniform(3, 10)};
    base.rotation = Eigen::AngleAxisd(rng.uniform(-0.2, 0.2), Eigen::Vector3d::UnitZ()) * court.rotation;
    const Eigen::Vector3d x(rng.uniform(-14, 14), rng.uniform(-7, 7), 0);
    const auto ray = world_point_to_ray(base, x);
    const CameraPose pose{ray.theta + rng.uniform(-5, 5), ray.phi + rng.uniform(-3, 3), rng.uniform(1000, 4000)};
    const auto direct = project_world_point(base, pose, k720, x);
    CHECK((direct - project_ray(pose, k720, ray)).norm() < 1e-9);
    const auto back = back_project(pose, k720, direct);
    CHECK(std::abs(back.theta - ray.theta) < 1e-9);
    CHECK(std::abs(back.phi - ray.phi) < 1e-9);
  }
}

TEST_CASE("relative homography") {
  CHECK(relative_homography({4, -2, 1700}, {4, -2, 1700}, k720).isIdentity(1e-12));

  // Pure zoom about the principal point, frozen from the 40-digit evaluation.
  Eigen::Matrix3d zoom;
  zoom << 2, 0, -640, 0, 2, -360, 0, 0, 1;
  CHECK((relative_homography({12, -7, 1500}, {12, -7, 3000}, k720) - zoom).cwiseAbs().maxCoeff() < 1e-9);

  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_pose(rng);
    const CameraPose b{a.pan + rng.uniform(-5, 5), a.tilt + rng.uniform(-5, 5), a.focal * rng.uniform(0.7, 1.4)};
    const auto h = relative_homography(a, b, k720);
    CHECK(h(2, 2) == 1.0);
    const Ray ray{a.pan + rng.uniform(-3, 3), a.tilt + rng.uniform(-2, 2)};
    const auto pa = project_ray(a, k720, ray);
    const auto pb = project_ray(b, k720, ray);
    CHECK((apply_homography(h, pa) - pb).norm() < 1e-6);
  }
}

TEST_CASE("ray angles") {
  CHECK(ray_angle({3, 4}, {3, 4}) == 0.0);
  CHECK(ray_angle({0, 0}, {2, 0}) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(ray_angle({0, 0}, {0, -7}) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(ray_angle({0, 60}, {2, 60}) < 2.0);
}

TEST_CASE("validation") {
  CHECK_THROWS(validate(ImageSize{1, 720}));
  CHECK_THROWS(validate(CameraPose{0, 0, 0}));
  CHECK_THROWS(validate(CameraPose{0, 90, 100}));
  CHECK_THROWS(validate(CameraPose{-180, 0, 100}));
  CHECK_NOTHROW(validate(CameraPose{180, 0, 100}));
  PtzBase bad;
  bad.rotation(0, 0) = -1;  // reflection
  CHECK_THROWS(validate(bad));
  CHECK(normalize_pan(190) == doctest::Approx(-170));
  CHECK(normalize_pan(-180) == doctest::Approx(180));
}

namespace {

// Central differences of project_ray over [pan, tilt, focal, theta, phi].
Eigen::Matrix<double, 2, 5> numeric_projection_jacobian(const CameraPose& pose, const ImageSize& size,
                                                        const Ray& ray) {
  Eigen::Matrix<double, 2, 5> j;
  const double steps[5] = {1e-5, 1e-5, 1e-3, 1e-5, 1e-5};
  for (int k = 0; k < 5; ++k) {
    double plus[5] = {pose.pan, pose.tilt, pose.focal, ray.theta, ray.phi};
    double minus[5] = {pose.pan, pose.tilt, pose.focal, ray.theta, ray.phi};
    plus[k] += steps[k];
    minus[k] -= steps[k];
    const auto pp = project_ray({plus[0], plus[1], plus[2]}, size, {plus[3], plus[4]});
    const auto pm = project_ray({minus[0], minus[1], minus[2]}, size, {minus[3], minus[4]});
    j.col(k) = (pp - pm) / (2 * steps[k]);
  }
  return j;
}

}  // namespace

TEST_CASE("projection jacobian matches central differences") {
  Rng rng(7);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto pose = random_pose(rng);
    const auto ray = random_visible_ray(pose, k720, rng);
    const auto analytic = projection_jacobian(pose, k720, ray);
    const auto numeric = numeric_projection_jacobian(pose, k720, ray);
    const double rel = (analytic - numeric).norm() / numeric.norm();
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("projection jacobian special cases") {
  const CameraPose pose{15, -10, 2500};
  const auto on_axis = projection_jacobian(pose, k720, {15, -10});
  CHECK(std::abs(on_axis(0, 2)) < 1e-12);
  CHECK(std::abs(on_axis(1, 2)) < 1e-12);

  const auto identity = projection_jacobian({0, 0, 1000}, k720, {0.5, 0});
  CHECK(identity(0, 3) > 0);
  CHECK_THROWS_AS(projection_jacobian({0, 0, 1000}, k720, {150, 0}), Error);
}

TEST_CASE("back-projection jacobian matches central differences") {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto pose = random_pose(rng);
    const Pixel p(rng.uniform(0, 1280), rng.uniform(0, 720));
    Ray base;
    try {
      base = back_project(pose, k720, p);
    } catch (const Error&) {
      continue;
    }
    const auto analytic = back_projection_jacobian(pose, k720, p);
    const double steps[5] = {1e-5, 1e-5, 1e-3, 1e-4, 1e-4};
    for (int k = 0; k < 5; ++k) {
      double plus[5] = {pose.pan, pose.tilt, pose.focal, p.x(), p.y()};
      double minus[5] = {pose.pan, pose.tilt, pose.focal, p.x(), p.y()};
      plus[k] += steps[k];
      minus[k] -= steps[k];
      const auto rp = back_project({plus[0], plus[1], plus[2]}, k720, {plus[3], plus[4]});
      const auto rm = back_project({minus[0], minus[1], minus[2]}, k720, {minus[3], minus[4]});
      const Eigen::Vector2d numeric((rp.theta - rm.theta) / (2 * steps[k]), (rp.phi - rm.phi) / (2 * steps[k]));
      CHECK((analytic.col(k) - numeric).norm() <= 1e-5 * std::max(1.0, numeric.norm()));
    }
  }
}
