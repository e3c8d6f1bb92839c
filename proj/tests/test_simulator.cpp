#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ptz/error.hpp"
#include "ptz/simulator.hpp"

using namespace ptz;

namespace {

SimulationConfig small_config() {
  SimulationConfig c;
  c.base = default_base();
  c.scene.num_landmarks = 400;
  c.scene.pan_range = {-40, 40};
  c.scene.tilt_range = {-30, 0};
  c.trajectory.num_frames = 20;
  c.trajectory.waypoints = {{0, {-5, -12, 1800}}, {19, {5, -10, 2000}}};
  c.noise.outlier_ratio = 0.2;
  c.noise.player_boxes_per_frame = 2;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generate_scene") {
  SceneConfig cfg;
  cfg.num_landmarks = 500;
  const auto base = default_base();

  SUBCASE("distinct latents without patterns") {
    const auto scene = generate_scene(cfg, base);
    double min_dist = 1e300;
    for (std::size_t i = 0; i < scene.landmarks.size(); ++i) {
      CHECK(scene.landmarks[i].id == static_cast<int>(i));
      CHECK(scene.landmarks[i].latent.size() == cfg.descriptor_dim);
      CHECK(scene.landmarks[i].ray.theta >= cfg.pan_range[0]);
      CHECK(scene.landmarks[i].ray.theta <= cfg.pan_range[1]);
      CHECK(scene.landmarks[i].ray.phi >= cfg.tilt_range[0]);
      CHECK(scene.landmarks[i].ray.phi <= cfg.tilt_range[1]);
      for (std::size_t k = 0; k < i; ++k)
        min_dist = std::min(min_dist, (scene.landmarks[i].latent - scene.landmarks[k].latent).norm());
    }
    CHECK(min_dist > 0);
    CHECK(scene.pattern_groups.empty());
  }
  SUBCASE("court landmarks lie on the ground plane") {
    cfg.court_fraction = 1.0;
    const auto scene = generate_scene(cfg, base);
    const CameraPose pose{0, -15, 1500};
    const ImageSize size;
    for (const auto& lm : scene.landmarks) {
      // Intersect the ray with Z = 0 and re-project both ways.
      const Eigen::Vector3d d = base.rotation.transpose() * ray_direction(lm.ray);
      REQUIRE(d.z() < 0);
      const Eigen::Vector3d world = base.center - base.center.z() / d.z() * d;
      CHECK(std::abs(world.z()) < 1e-9);
      CHECK(world.x() >= cfg.court_x[0] - 1e-9);
      CHECK(world.x() <= cfg.court_x[1] + 1e-9);
      const Ray back = world_point_to_ray(base, world);
      CHECK(ray_angle(back, lm.ray) < 1e-9);
      try {
        const auto a = project_world_point(base, pose, size, world);
        const auto b = project_ray(pose, size, lm.ray);
        CHECK((a - b).norm() < 1e-6);
      } catch (const Error&) {
      }
    }
  }
  SUBCASE("pattern groups share latents") {
    cfg.pattern_group_count = 50;
    const auto scene = generate_scene(cfg, base);
    REQUIRE(scene.pattern_groups.size() == 50);
    for (const auto& g : scene.pattern_groups) {
      CHECK(g.size() == 10);
      for (int m : g) CHECK(scene.landmarks[m].latent == scene.landmarks[g.front()].latent);
    }
    CHECK(scene.landmarks[0].latent != scene.landmarks[1].latent);
  }
  SUBCASE("deterministic") {
    const auto a = generate_scene(cfg, base), b = generate_scene(cfg, base);
    for (std::size_t i = 0; i < a.landmarks.size(); ++i) {
      CHECK(a.landmarks[i].ray.theta == b.landmarks[i].ray.theta);
      CHECK(a.landmarks[i].latent == b.landmarks[i].latent);
    }
    cfg.seed = 2;
    CHECK(generate_scene(cfg, base).landmarks[0].ray.theta != a.landmarks[0].ray.theta);
  }
  SUBCASE("invalid") {
    cfg.num_landmarks = 0;
    CHECK_THROWS_AS(generate_scene(cfg, base), Error);
  }
}

TEST_CASE("generate_trajectory") {
  TrajectoryConfig t;
  t.num_frames = 101;
  t.fps = 50;
  t.waypoints = {{0, {0, 0, 1000}}, {100, {10, -5, 2000}}};

  SUBCASE("linear is constant velocity") {
    t.interpolation = Interpolation::Linear;
    const auto poses = generate_trajectory(t);
    REQUIRE(poses.size() == 101);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      CHECK(poses[k].pan == doctest::Approx(0.1 * k).epsilon(1e-12));
      CHECK(poses[k].focal == doctest::Approx(1000 + 10.0 * k).epsilon(1e-12));
    }
  }
  SUBCASE("cubic is exact at waypoints and smooth") {
    t.waypoints = {{0, {0, 0, 1000}}, {30, {4, -2, 1500}}, {60, {-3, 1, 1200}}, {100, {2, 0, 2500}}};
    const auto poses = generate_trajectory(t);
    for (const auto& w : t.waypoints) {
      CHECK(poses[w.frame].pan == doctest::Approx(w.pose.pan).epsilon(1e-12));
      CHECK(poses[w.frame].tilt == doctest::Approx(w.pose.tilt).epsilon(1e-12));
      CHECK(poses[w.frame].focal == doctest::Approx(w.pose.focal).epsilon(1e-12));
    }
    // Zero end tangents; continuous first difference across waypoints.
    CHECK(std::abs(poses[1].pan - poses[0].pan) < 0.02);  // mean step is 0.13
    for (int k = 2; k < 100; ++k) {
      const double a = poses[k].pan - poses[k - 1].pan, b = poses[k - 1].pan - poses[k - 2].pan;
      CHECK(std::abs(a - b) < 0.05);
    }
  }
  SUBCASE("hold after the last waypoint") {
    t.num_frames = 120;
    const auto poses = generate_trajectory(t);
    CHECK(poses.back().pan == 10);
  }
  SUBCASE("invalid waypoints") {
    t.waypoints = {{1, {0, 0, 1000}}};
    CHECK_THROWS_AS(generate_trajectory(t), Error);
    t.waypoints = {{0, {0, 0, 1000}}, {0, {1, 0, 1000}}};
    CHECK_THROWS_AS(generate_trajectory(t), Error);
  }
}

TEST_CASE("mean_angular_velocity") {
  std::vector<CameraPose> poses;
  for (int k = 0; k < 61; ++k) poses.push_back({0.83 * k / 60.0, 0, 2000});
  CHECK(mean_angular_velocity(poses, 60) == doctest::Approx(0.83).epsilon(1e-9));
  std::vector<CameraPose> still(10, CameraPose{3, -4, 1500});
  CHECK(mean_angular_velocity(still, 60) == 0.0);
  CHECK_THROWS_AS(mean_angular_velocity(std::span<const CameraPose>(still).first(1), 60), Error);
  // At tilt 60 deg the same pan rate sweeps half the angle.
  for (auto& p : poses) p.tilt = 60;
  CHECK(mean_angular_velocity(poses, 60) == doctest::Approx(0.83 * 0.5).epsilon(1e-3));
}

TEST_CASE("render_frame") {
  SceneConfig sc;
  sc.num_landmarks = 2000;
  const auto scene = generate_scene(sc, default_base());
  const ImageSize size;
  const CameraPose pose{5, -10, 1500};

  SUBCASE("noise-free pixels are exact projections") {
    NoiseConfig n;
    n.pixel_sigma = 0;
    n.descriptor_sigma = 0;
    const auto f = render_frame(scene, pose, size, n, 3);
    REQUIRE(!f.observations.empty());
    for (const auto& o : f.observations) {
      const auto& lm = scene.landmarks[*o.true_landmark_id];
      CHECK((o.pixel - project_ray(pose, size, lm.ray)).norm() == 0.0);
      CHECK(o.descriptor == lm.latent);
    }
    CHECK(f.ground_truth.pan == pose.pan);
    CHECK(f.index == 3);
  }
  SUBCASE("outliers, bounds and ground-truth consistency") {
    NoiseConfig n;
    n.outlier_ratio = 0.5;
    n.pixel_sigma = 0.5;
    const auto a = render_frame(scene, pose, size, n, 7);
    const auto b = render_frame(scene, pose, size, n, 7);
    REQUIRE(a.observations.size() == b.observations.size());
    int outliers = 0;
    for (std::size_t i = 0; i < a.observations.size(); ++i) {
      const auto& o = a.observations[i];
      CHECK(size.contains(o.pixel));
      CHECK(o.pixel == b.observations[i].pixel);
      if (!o.true_landmark_id) {
        ++outliers;
        continue;
      }
      const auto& lm = scene.landmarks[*o.true_landmark_id];
      CHECK((o.pixel - project_ray(pose, size, lm.ray)).norm() <= 5 * n.pixel_sigma);
    }
    const double n_obs = static_cast<double>(a.observations.size());
    MESSAGE(outliers << " outliers of " << n_obs);
    CHECK(std::abs(outliers - 0.5 * n_obs) < 4 * std::sqrt(0.25 * n_obs));
    // Other frames draw different noise.
    CHECK(render_frame(scene, pose, size, n, 8).observations.front().pixel != a.observations.front().pixel);
  }
  SUBCASE("dropout, boxes and in-box corruption") {
    NoiseConfig n;
    n.dropout_ratio = 0.5;
    const auto full = render_frame(scene, pose, size, NoiseConfig{}, 1).observations.size();
    const auto dropped = render_frame(scene, pose, size, n, 1).observations.size();
    CHECK(dropped < 0.6 * full);
    CHECK(dropped > 0.4 * full);

    NoiseConfig boxes;
    boxes.player_boxes_per_frame = 6;
    boxes.box_size = {150, 250};
    boxes.corrupt_in_boxes = true;
    const auto f = render_frame(scene, pose, size, boxes, 2);
    REQUIRE(f.player_boxes.size() == 6);
    int inside = 0;
    for (const auto& b : f.player_boxes) {
      CHECK(b.x0 >= 0);
      CHECK(b.x1 <= size.width);
      CHECK(b.x1 - b.x0 == doctest::Approx(150));
    }
    for (const auto& o : f.observations) {
      bool in = false;
      for (const auto& b : f.player_boxes) in = in || b.contains(o.pixel);
      inside += in;
      if (in) CHECK(!o.true_landmark_id);
    }
    CHECK(inside > 0);
  }
  SUBCASE("blackout") {
    NoiseConfig n;
    n.blackout_start = 5;
    n.blackout_length = 3;
    CHECK(render_frame(scene, pose, size, n, 4).observations.size() > 0);
    CHECK(render_frame(scene, pose, size, n, 5).observations.empty());
    CHECK(render_frame(scene, pose, size, n, 7).observations.empty());
    CHECK(render_frame(scene, pose, size, n, 8).observations.size() > 0);
  }
}

TEST_CASE("bundle round trip") {
  const auto config = small_config();
  const auto bundle = simulate(config);
  REQUIRE(bundle.frames.size() == 20);
  const auto dir = std::filesystem::temp_directory_path() / "ptz_bundle_test";
  std::filesystem::create_directories(dir);
  for (bool sidecar : {false, true}) {
    const auto path = dir / (sidecar ? "b_sidecar.json" : "b_inline.json");
    write_bundle(bundle, path, sidecar);
    CHECK(std::filesystem::exists(path.string() + ".obs.bin") == sidecar);
    const auto back = read_bundle(path);
    REQUIRE(back.frames.size() == bundle.frames.size());
    CHECK(back.base.center == bundle.base.center);
    CHECK(back.base.rotation == bundle.base.rotation);
    CHECK(back.fps == bundle.fps);
    for (std::size_t k = 0; k < bundle.frames.size(); ++k) {
      const auto &a = bundle.frames[k], &b = back.frames[k];
      CHECK(a.ground_truth.pan == b.ground_truth.pan);
      CHECK(a.ground_truth.focal == b.ground_truth.focal);
      REQUIRE(a.observations.size() == b.observations.size());
      REQUIRE(a.player_boxes.size() == b.player_boxes.size());
      CHECK(a.player_boxes[0].x1 == b.player_boxes[0].x1);
      for (std::size_t i = 0; i < a.observations.size(); ++i) {
        CHECK(a.observations[i].pixel == b.observations[i].pixel);
        CHECK(a.observations[i].descriptor == b.observations[i].descriptor);
        CHECK(a.observations[i].true_landmark_id == b.observations[i].true_landmark_id);
      }
    }
    CHECK(back.scene.landmarks.size() == bundle.scene.landmarks.size());
    CHECK(back.scene.landmarks[7].latent == bundle.scene.landmarks[7].latent);
    // Byte-identical on rewrite.
    const auto again = dir / "again" / path.filename();
    std::filesystem::create_directories(again.parent_path());
    write_bundle(simulate(config), again, sidecar);
    CHECK(slurp(again) == slurp(path));
    if (sidecar) CHECK(slurp(again.string() + ".obs.bin") == slurp(path.string() + ".obs.bin"));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulation config parsing") {
  const auto j = to_json(small_config());
  const auto c = simulation_config_from_json(j);
  CHECK(c.scene.num_landmarks == 400);
  CHECK(c.trajectory.waypoints.size() == 2);
  CHECK(c.noise.outlier_ratio == 0.2);
  CHECK(to_json(c) == j);

  const auto message = [](const nlohmann::json& bad) {
    try {
      simulation_config_from_json(bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Config);
      return std::string(e.what());
    }
    return std::string("no error");
  };
  auto bad = j;
  bad["scene"]["num_landmarks"] = "many";
  CHECK(message(bad).find("scene.num_landmarks") != std::string::npos);
  bad = j;
  bad["noise"]["outlier_ratoi"] = 0.1;
  CHECK(message(bad).find("noise.outlier_ratoi") != std::string::npos);
  bad = j;
  bad["trajectory"]["waypoints"][1]["pose"].erase("focal");
  CHECK(message(bad).find("trajectory.waypoints[1].pose.focal") != std::string::npos);
  bad = j;
  bad["noise"]["outlier_ratio"] = 1.5;
  CHECK(message(bad).find("noise") != std::string::npos);
}
