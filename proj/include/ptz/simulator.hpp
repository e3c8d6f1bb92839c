#pragma once
// Synthetic PTZ sequences: a scene of ray landmarks with latent
// descriptors, a pose trajectory and noisy per-frame observations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ptz/camera.hpp"
#include "ptz/ekf.hpp"
#include "ptz/random.hpp"

namespace ptz {

struct SceneConfig {
  std::array<double, 2> pan_range{-60.0, 60.0};
  std::array<double, 2> tilt_range{-35.0, 5.0};
  int num_landmarks = 3000;
  int descriptor_dim = 16;
  // > 0: landmarks are split into this many groups, each sharing one latent.
  int pattern_group_count = 0;
  // Fraction of landmarks placed on the world Z = 0 plane (the court).
  double court_fraction = 0.3;
  std::array<double, 2> court_x{-14.0, 14.0};
  std::array<double, 2> court_y{-7.5, 7.5};
  std::uint64_t seed = 1;
};

struct SceneLandmark {
  int id = 0;
  Ray ray;
  Eigen::VectorXd latent;
  int group = -1;
};

struct SceneModel {
  std::vector<SceneLandmark> landmarks;
  std::vector<std::vector<int>> pattern_groups;
};

SceneModel generate_scene(const SceneConfig& config, const PtzBase& base);

enum class Interpolation { Linear, Cubic };

struct Waypoint {
  int frame = 0;
  CameraPose pose;
};

struct TrajectoryConfig {
  std::vector<Waypoint> waypoints;
  Interpolation interpolation = Interpolation::Cubic;
  double fps = 60.0;
  int num_frames = 600;
};

void validate(const TrajectoryConfig& config);

/// One pose per frame, exact at waypoints, held after the last one. Cubic
/// uses Catmull-Rom tangents with zero tangents at both ends.
std::vector<CameraPose> generate_trajectory(const TrajectoryConfig& config);

/// Mean great-circle angle between consecutive optical axes, times fps.
double mean_angular_velocity(std::span<const CameraPose> poses, double fps);

struct PixelBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(const Pixel& p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }
};

struct NoiseConfig {
  double pixel_sigma = 0.5;
  double outlier_ratio = 0.0;
  double descriptor_sigma = 0.1;
  int player_boxes_per_frame = 0;
  std::array<double, 2> box_size{40.0, 80.0};
  double dropout_ratio = 0.0;
  // Features on players: observations inside a box keep their descriptor
  // but move with the box (one random displacement per box and frame).
  bool corrupt_in_boxes = false;
  double box_displacement_px = 12.0;
  // Frames [start, start + length) carry no observations.
  int blackout_start = -1;
  int blackout_length = 0;
  std::uint64_t seed = 1;
};

void validate(const NoiseConfig& config);

struct FrameObservations {
  int index = 0;
  std::vector<Observation> observations;
  std::vector<PixelBox> player_boxes;
  CameraPose ground_truth;
};

FrameObservations render_frame(const SceneModel& scene, const CameraPose& pose, const ImageSize& size,
                               const NoiseConfig& noise, int frame_index);

struct SimulationConfig {
  PtzBase base;
  ImageSize size;
  SceneConfig scene;
  TrajectoryConfig trajectory;
  NoiseConfig noise;
};

/// Court-side camera: 12 m behind the centre line, 5 m up, world Z up.
PtzBase default_base();

SimulationConfig simulation_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimulationConfig& config);

struct SequenceBundle {
  PtzBase base;
  ImageSize size;
  double fps = 60.0;
  std::vector<FrameObservations> frames;
  SceneModel scene;
};

SequenceBundle simulate(const SimulationConfig& config);

inline constexpr int kBundleSchemaVersion = 1;

/// Writes the bundle JSON. When `sidecar` is set (or the bundle holds more
/// than `kSidecarThreshold` observations and sidecar is not explicitly off),
/// observations go to "<path>.obs.bin" as little-endian doubles.
inline constexpr std::size_t kSidecarThreshold = 200000;
void write_bundle(const SequenceBundle& bundle, const std::filesystem::path& path,
                  std::optional<bool> sidecar = std::nullopt);
SequenceBundle read_bundle(const std::filesystem::path& path);

}  // namespace ptz
