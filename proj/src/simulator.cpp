#include "ptz/simulator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json_fields.hpp"
#include "ptz/error.hpp"
#include "ptz/io.hpp"

namespace ptz {

using nlohmann::json;
using detail::Fields;

static_assert(std::endian::native == std::endian::little, "bundle sidecars assume a little-endian host");

namespace {

bool in_range(double v, const std::array<double, 2>& r) { return v >= r[0] && v <= r[1]; }

}  // namespace

SceneModel generate_scene(const SceneConfig& config, const PtzBase& base) {
  if (config.num_landmarks < 1) throw Error(ErrorCode::InvalidArgument, "num_landmarks must be at least 1");
  if (config.descriptor_dim < 1) throw Error(ErrorCode::InvalidArgument, "descriptor_dim must be at least 1");
  if (!(config.pan_range[1] > config.pan_range[0] && config.tilt_range[1] > config.tilt_range[0]))
    throw Error(ErrorCode::InvalidArgument, "empty pan/tilt extent");
  if (config.court_fraction < 0 || config.court_fraction > 1)
    throw Error(ErrorCode::InvalidArgument, "court_fraction must be in [0, 1]");
  if (config.pattern_group_count < 0 || config.pattern_group_count > config.num_landmarks)
    throw Error(ErrorCode::InvalidArgument, "pattern_group_count must be in [0, num_landmarks]");

  Rng rng(config.seed, 0);
  SceneModel scene;
  scene.landmarks.resize(config.num_landmarks);
  for (int i = 0; i < config.num_landmarks; ++i) {
    auto& lm = scene.landmarks[i];
    lm.id = i;
    if (rng.bernoulli(config.court_fraction)) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const Eigen::Vector3d p(rng.uniform(config.court_x[0], config.court_x[1]),
                                rng.uniform(config.court_y[0], config.court_y[1]), 0.0);
        const Ray r = world_point_to_ray(base, p);
        if (in_range(r.theta, config.pan_range) && in_range(r.phi, config.tilt_range)) {
          lm.ray = r;
          placed = true;
        }
      }
      if (!placed) throw Error(ErrorCode::InvalidArgument, "court is not inside the pan/tilt extent");
    } else {
      lm.ray = {rng.uniform(config.pan_range[0], config.pan_range[1]),
                rng.uniform(config.tilt_range[0], config.tilt_range[1])};
    }
  }
  const auto draw = [&] {
    Eigen::VectorXd v(config.descriptor_dim);
    for (int k = 0; k < config.descriptor_dim; ++k) v(k) = rng.normal();
    return v;
  };
  if (config.pattern_group_count > 0) {
    scene.pattern_groups.resize(config.pattern_group_count);
    std::vector<Eigen::VectorXd> latents;
    for (int g = 0; g < config.pattern_group_count; ++g) latents.push_back(draw());
    for (auto& lm : scene.landmarks) {
      lm.group = lm.id % config.pattern_group_count;
      lm.latent = latents[lm.group];
      scene.pattern_groups[lm.group].push_back(lm.id);
    }
  } else {
    for (auto& lm : scene.landmarks) lm.latent = draw();
  }
  return scene;
}

void validate(const TrajectoryConfig& c) {
  if (c.waypoints.empty()) throw Error(ErrorCode::InvalidArgument, "trajectory needs waypoints");
  if (c.waypoints.front().frame != 0) throw Error(ErrorCode::InvalidArgument, "first waypoint must be at frame 0");
  for (std::size_t i = 1; i < c.waypoints.size(); ++i)
    if (c.waypoints[i].frame <= c.waypoints[i - 1].frame)
      throw Error(ErrorCode::InvalidArgument, "waypoint frames must be strictly increasing");
  for (const auto& w : c.waypoints) validate(w.pose);
  if (!(c.fps > 0)) throw Error(ErrorCode::InvalidArgument, "fps must be positive");
  if (c.num_frames < 1) throw Error(ErrorCode::InvalidArgument, "num_frames must be at least 1");
}

std::vector<CameraPose> generate_trajectory(const TrajectoryConfig& c) {
  validate(c);
  const auto& w = c.waypoints;
  const auto vec = [](const CameraPose& p) { return Eigen::Vector3d(p.pan, p.tilt, p.focal); };
  // Tangents in units per frame.
  std::vector<Eigen::Vector3d> tangent(w.size(), Eigen::Vector3d::Zero());
  for (std::size_t i = 1; i + 1 < w.size(); ++i)
    tangent[i] = (vec(w[i + 1].pose) - vec(w[i - 1].pose)) / double(w[i + 1].frame - w[i - 1].frame);

  std::vector<CameraPose> poses;
  poses.reserve(c.num_frames);
  std::size_t seg = 0;
  for (int k = 0; k < c.num_frames; ++k) {
    while (seg + 1 < w.size() && w[seg + 1].frame <= k) ++seg;
    if (seg + 1 >= w.size()) {
      poses.push_back(w.back().pose);
      continue;
    }
    const double span = w[seg + 1].frame - w[seg].frame;
    const double s = (k - w[seg].frame) / span;
    const Eigen::Vector3d p0 = vec(w[seg].pose), p1 = vec(w[seg + 1].pose);
    Eigen::Vector3d p;
    if (c.interpolation == Interpolation::Linear) {
      p = (1 - s) * p0 + s * p1;
    } else {
      const double s2 = s * s, s3 = s2 * s;
      p = (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * span * tangent[seg] + (-2 * s3 + 3 * s2) * p1 +
          (s3 - s2) * span * tangent[seg + 1];
    }
    poses.push_back({p(0), p(1), p(2)});
  }
  return poses;
}

double mean_angular_velocity(std::span<const CameraPose> poses, double fps) {
  if (poses.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two poses");
  double sum = 0.0;
  for (std::size_t i = 1; i < poses.size(); ++i) sum += vector_angle(optical_axis(poses[i - 1]), optical_axis(poses[i]));
  return sum / static_cast<double>(poses.size() - 1) * fps;
}

void validate(const NoiseConfig& n) {
  const auto ratio = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!ratio(n.outlier_ratio) || !ratio(n.dropout_ratio))
    throw Error(ErrorCode::InvalidArgument, "noise ratios must be in [0, 1]");
  if (n.pixel_sigma < 0 || n.descriptor_sigma < 0 || n.box_displacement_px < 0)
    throw Error(ErrorCode::InvalidArgument, "noise sigmas must be non-negative");
  if (n.player_boxes_per_frame < 0 || !(n.box_size[0] > 0 && n.box_size[1] > 0))
    throw Error(ErrorCode::InvalidArgument, "invalid player box settings");
}

FrameObservations render_frame(const SceneModel& scene, const CameraPose& pose, const ImageSize& size,
                               const NoiseConfig& noise, int frame_index) {
  validate(pose);
  validate(noise);
  FrameObservations frame;
  frame.index = frame_index;
  frame.ground_truth = pose;
  Rng rng(noise.seed, static_cast<std::uint64_t>(frame_index) + 1);
  if (noise.blackout_start >= 0 && frame_index >= noise.blackout_start &&
      frame_index < noise.blackout_start + noise.blackout_length)
    return frame;

  for (const auto& lm : scene.landmarks) {
    Pixel p;
    try {
      p = project_ray(pose, size, lm.ray);
    } catch (const Error&) {
      continue;
    }
    if (!size.contains(p)) continue;
    if (noise.dropout_ratio > 0 && rng.bernoulli(noise.dropout_ratio)) continue;
    if (noise.pixel_sigma > 0) p += Pixel(rng.normal(0, noise.pixel_sigma), rng.normal(0, noise.pixel_sigma));
    if (!size.contains(p)) continue;
    Eigen::VectorXd d = lm.latent;
    if (noise.descriptor_sigma > 0)
      for (Eigen::Index k = 0; k < d.size(); ++k) d(k) += rng.normal(0, noise.descriptor_sigma);
    frame.observations.push_back({p, std::move(d), lm.id});
  }
  if (noise.outlier_ratio > 0) {
    for (auto& o : frame.observations) {
      if (!rng.bernoulli(noise.outlier_ratio)) continue;
      o.pixel = Pixel(rng.uniform(0, size.width), rng.uniform(0, size.height));
      for (Eigen::Index k = 0; k < o.descriptor.size(); ++k) o.descriptor(k) = rng.normal();
      o.true_landmark_id.reset();
    }
  }
  const double bw = std::min<double>(noise.box_size[0], size.width);
  const double bh = std::min<double>(noise.box_size[1], size.height);
  for (int b = 0; b < noise.player_boxes_per_frame; ++b) {
    const double x0 = rng.uniform(0, size.width - bw), y0 = rng.uniform(0, size.height - bh);
    frame.player_boxes.push_back({x0, y0, x0 + bw, y0 + bh});
  }
  if (noise.corrupt_in_boxes && !frame.player_boxes.empty()) {
    std::vector<Pixel> shift;
    for (std::size_t b = 0; b < frame.player_boxes.size(); ++b)
      shift.emplace_back(rng.uniform(-noise.box_displacement_px, noise.box_displacement_px),
                         rng.uniform(-noise.box_displacement_px, noise.box_displacement_px));
    for (auto& o : frame.observations) {
      for (std::size_t b = 0; b < frame.player_boxes.size(); ++b) {
        const auto& box = frame.player_boxes[b];
        if (!box.contains(o.pixel)) continue;
        o.pixel = (o.pixel + shift[b]).cwiseMax(Pixel(box.x0, box.y0)).cwiseMin(Pixel(box.x1, box.y1));
        o.true_landmark_id.reset();
        break;
      }
    }
  }
  return frame;
}

PtzBase default_base() {
  PtzBase base;
  base.center = Eigen::Vector3d(0.0, -12.0, 5.0);
  base.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  return base;
}

SequenceBundle simulate(const SimulationConfig& config) {
  validate(config.size);
  validate(config.base);
  SequenceBundle bundle;
  bundle.base = config.base;
  bundle.size = config.size;
  bundle.fps = config.trajectory.fps;
  bundle.scene = generate_scene(config.scene, config.base);
  const auto poses = generate_trajectory(config.trajectory);
  bundle.frames.reserve(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k)
    bundle.frames.push_back(render_frame(bundle.scene, poses[k], config.size, config.noise, static_cast<int>(k)));
  return bundle;
}

// --- config JSON -----------------------------------------------------------

namespace {

json pose_json(const CameraPose& p) { return {{"pan", p.pan}, {"tilt", p.tilt}, {"focal", p.focal}}; }

CameraPose pose_from(const json& j, const std::string& path) {
  Fields f(j, path);
  CameraPose p;
  for (const char* key : {"pan", "tilt", "focal"})
    if (!f.has(key)) Fields::fail(f.field(key), "missing");
  f.read("pan", p.pan);
  f.read("tilt", p.tilt);
  f.read("focal", p.focal);
  f.finish();
  return p;
}

std::vector<double> flat(const Eigen::Matrix3d& m) {
  std::vector<double> v;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v.push_back(m(r, c));
  return v;
}

PtzBase base_from(const json& j, const std::string& path) {
  Fields f(j, path);
  PtzBase base = default_base();
  std::array<double, 3> c{base.center.x(), base.center.y(), base.center.z()};
  f.read("center", c);
  base.center = Eigen::Vector3d(c[0], c[1], c[2]);
  if (f.has("rotation")) {
    std::array<double, 9> r{};
    f.read("rotation", r);
    for (int i = 0; i < 9; ++i) base.rotation(i / 3, i % 3) = r[i];
  }
  f.finish();
  try {
    validate(base);
  } catch (const Error& e) {
    Fields::fail(path, e.what());
  }
  return base;
}

}  // namespace

SimulationConfig simulation_config_from_json(const json& j) {
  SimulationConfig c;
  Fields top(j, "");
  top.ignore("preset");
  top.ignore("description");
  if (const auto* b = top.child("base")) c.base = base_from(*b, "base");
  else c.base = default_base();
  if (const auto* im = top.child("image")) {
    Fields f(*im, "image");
    f.read("width", c.size.width);
    f.read("height", c.size.height);
    f.finish();
    if (c.size.width < 1 || c.size.height < 1) Fields::fail("image", "width and height must be positive");
  }
  if (const auto* s = top.child("scene")) {
    Fields f(*s, "scene");
    f.read("pan_range", c.scene.pan_range);
    f.read("tilt_range", c.scene.tilt_range);
    f.read("num_landmarks", c.scene.num_landmarks);
    f.read("descriptor_dim", c.scene.descriptor_dim);
    f.read("pattern_group_count", c.scene.pattern_group_count);
    f.read("court_fraction", c.scene.court_fraction);
    f.read("court_x", c.scene.court_x);
    f.read("court_y", c.scene.court_y);
    f.read("seed", c.scene.seed);
    f.finish();
    if (c.scene.num_landmarks < 1) Fields::fail("scene.num_landmarks", "must be at least 1");
    if (c.scene.descriptor_dim < 1) Fields::fail("scene.descriptor_dim", "must be at least 1");
    if (c.scene.court_fraction < 0 || c.scene.court_fraction > 1) Fields::fail("scene.court_fraction", "must be in [0, 1]");
  }
  if (const auto* t = top.child("trajectory")) {
    Fields f(*t, "trajectory");
    f.read("fps", c.trajectory.fps);
    f.read("num_frames", c.trajectory.num_frames);
    std::string interp = "cubic";
    f.read("interpolation", interp);
    if (interp == "cubic") c.trajectory.interpolation = Interpolation::Cubic;
    else if (interp == "linear") c.trajectory.interpolation = Interpolation::Linear;
    else Fields::fail("trajectory.interpolation", "expected \"cubic\" or \"linear\"");
    if (const auto* w = f.child("waypoints")) {
      if (!w->is_array()) Fields::fail("trajectory.waypoints", "expected an array");
      for (std::size_t i = 0; i < w->size(); ++i) {
        const std::string path = "trajectory.waypoints[" + std::to_string(i) + "]";
        Fields wf((*w)[i], path);
        Waypoint wp;
        if (!wf.has("frame")) Fields::fail(path + ".frame", "missing");
        wf.read("frame", wp.frame);
        if (const auto* p = wf.child("pose")) wp.pose = pose_from(*p, path + ".pose");
        else Fields::fail(path + ".pose", "missing");
        wf.finish();
        c.trajectory.waypoints.push_back(wp);
      }
    }
    f.finish();
    try {
      validate(c.trajectory);
    } catch (const Error& e) {
      Fields::fail("trajectory", e.what());
    }
  }
  if (const auto* n = top.child("noise")) {
    Fields f(*n, "noise");
    f.read("pixel_sigma", c.noise.pixel_sigma);
    f.read("outlier_ratio", c.noise.outlier_ratio);
    f.read("descriptor_sigma", c.noise.descriptor_sigma);
    f.read("player_boxes_per_frame", c.noise.player_boxes_per_frame);
    f.read("box_size", c.noise.box_size);
    f.read("dropout_ratio", c.noise.dropout_ratio);
    f.read("corrupt_in_boxes", c.noise.corrupt_in_boxes);
    f.read("box_displacement_px", c.noise.box_displacement_px);
    f.read("blackout_start", c.noise.blackout_start);
    f.read("blackout_length", c.noise.blackout_length);
    f.read("seed", c.noise.seed);
    f.finish();
    try {
      validate(c.noise);
    } catch (const Error& e) {
      Fields::fail("noise", e.what());
    }
  }
  top.finish();
  if (c.trajectory.waypoints.empty()) Fields::fail("trajectory.waypoints", "missing");
  return c;
}

json to_json(const SimulationConfig& c) {
  json waypoints = json::array();
  for (const auto& w : c.trajectory.waypoints) waypoints.push_back({{"frame", w.frame}, {"pose", pose_json(w.pose)}});
  return {
      {"base", {{"center", {c.base.center.x(), c.base.center.y(), c.base.center.z()}}, {"rotation", flat(c.base.rotation)}}},
      {"image", {{"width", c.size.width}, {"height", c.size.height}}},
      {"scene",
       {{"pan_range", c.scene.pan_range},
        {"tilt_range", c.scene.tilt_range},
        {"num_landmarks", c.scene.num_landmarks},
        {"descriptor_dim", c.scene.descriptor_dim},
        {"pattern_group_count", c.scene.pattern_group_count},
        {"court_fraction", c.scene.court_fraction},
        {"court_x", c.scene.court_x},
        {"court_y", c.scene.court_y},
        {"seed", c.scene.seed}}},
      {"trajectory",
       {{"fps", c.trajectory.fps},
        {"num_frames", c.trajectory.num_frames},
        {"interpolation", c.trajectory.interpolation == Interpolation::Cubic ? "cubic" : "linear"},
        {"waypoints", waypoints}}},
      {"noise",
       {{"pixel_sigma", c.noise.pixel_sigma},
        {"outlier_ratio", c.noise.outlier_ratio},
        {"descriptor_sigma", c.noise.descriptor_sigma},
        {"player_boxes_per_frame", c.noise.player_boxes_per_frame},
        {"box_size", c.noise.box_size},
        {"dropout_ratio", c.noise.dropout_ratio},
        {"corrupt_in_boxes", c.noise.corrupt_in_boxes},
        {"box_displacement_px", c.noise.box_displacement_px},
        {"blackout_start", c.noise.blackout_start},
        {"blackout_length", c.noise.blackout_length},
        {"seed", c.noise.seed}}},
  };
}

// --- bundle I/O ------------------------------------------------------------

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void put(std::string& buf, double v) {
  char b[sizeof(double)];
  std::memcpy(b, &v, sizeof v);
  buf.append(b, sizeof b);
}

double take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(double) > buf.size()) throw Error(ErrorCode::Io, "observation sidecar is truncated");
  double v;
  std::memcpy(&v, buf.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace

void write_bundle(const SequenceBundle& bundle, const std::filesystem::path& path, std::optional<bool> sidecar) {
  std::size_t total = 0;
  for (const auto& f : bundle.frames) total += f.observations.size();
  const bool use_sidecar = sidecar.value_or(total > kSidecarThreshold);
  const int dim = bundle.scene.landmarks.empty() ? 0 : static_cast<int>(bundle.scene.landmarks.front().latent.size());

  json j;
  j["schema_version"] = kBundleSchemaVersion;
  j["base"] = {{"C", {bundle.base.center.x(), bundle.base.center.y(), bundle.base.center.z()}},
               {"S", flat(bundle.base.rotation)}};
  j["image"] = {{"w", bundle.size.width}, {"h", bundle.size.height}};
  j["fps"] = bundle.fps;
  std::string blob;
  const auto sidecar_path = path.string() + ".obs.bin";
  if (use_sidecar) {
    j["obs_sidecar"] = {{"file", std::filesystem::path(sidecar_path).filename().string()},
                        {"layout", "f64le: x, y, gt_id (-1 = none), desc[descriptor_dim]"},
                        {"descriptor_dim", dim}};
    blob.reserve(total * (3 + dim) * sizeof(double));
  }
  json frames = json::array();
  for (const auto& f : bundle.frames) {
    json boxes = json::array();
    for (const auto& b : f.player_boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    json jf{{"idx", f.index}, {"gt_pose", pose_json(f.ground_truth)}, {"boxes", boxes}};
    if (use_sidecar) {
      jf["obs_count"] = f.observations.size();
      for (const auto& o : f.observations) {
        if (o.descriptor.size() != dim) throw Error(ErrorCode::InvalidArgument, "descriptor dimension mismatch");
        put(blob, o.pixel.x());
        put(blob, o.pixel.y());
        put(blob, o.true_landmark_id ? *o.true_landmark_id : -1.0);
        for (Eigen::Index k = 0; k < o.descriptor.size(); ++k) put(blob, o.descriptor(k));
      }
    } else {
      json obs = json::array();
      for (const auto& o : f.observations)
        obs.push_back({{"x", o.pixel.x()},
                       {"y", o.pixel.y()},
                       {"desc", vec_json(o.descriptor)},
                       {"gt_id", o.true_landmark_id ? json(*o.true_landmark_id) : json(nullptr)}});
      jf["obs"] = std::move(obs);
    }
    frames.push_back(std::move(jf));
  }
  j["frames"] = std::move(frames);
  json landmarks = json::array();
  for (const auto& lm : bundle.scene.landmarks)
    landmarks.push_back({{"id", lm.id}, {"theta", lm.ray.theta}, {"phi", lm.ray.phi}, {"latent", vec_json(lm.latent)}});
  j["scene"] = {{"landmarks", std::move(landmarks)}};

  if (use_sidecar) write_file_atomic(sidecar_path, blob);
  write_file_atomic(path, j.dump() + "\n");
}

SequenceBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read bundle " + path.string());
  try {
    const json j = json::parse(in);
    const int version = j.at("schema_version");
    if (version != kBundleSchemaVersion)
      throw Error(ErrorCode::Io, "unsupported bundle schema_version " + std::to_string(version));
    SequenceBundle b;
    const auto c = j.at("base").at("C").get<std::vector<double>>();
    const auto s = j.at("base").at("S").get<std::vector<double>>();
    if (c.size() != 3 || s.size() != 9) throw Error(ErrorCode::Io, "bundle base must have 3 + 9 numbers");
    b.base.center = Eigen::Vector3d(c[0], c[1], c[2]);
    for (int i = 0; i < 9; ++i) b.base.rotation(i / 3, i % 3) = s[i];
    b.size.width = j.at("image").at("w");
    b.size.height = j.at("image").at("h");
    b.fps = j.at("fps");
    for (const auto& lm : j.at("scene").at("landmarks")) {
      SceneLandmark l;
      l.id = lm.at("id");
      l.ray = {lm.at("theta"), lm.at("phi")};
      l.latent = json_vec(lm.at("latent"));
      b.scene.landmarks.push_back(std::move(l));
    }
    std::string blob;
    std::size_t pos = 0;
    int dim = 0;
    const bool sidecar = j.contains("obs_sidecar");
    if (sidecar) {
      dim = j.at("obs_sidecar").at("descriptor_dim");
      const auto file = path.parent_path() / j.at("obs_sidecar").at("file").get<std::string>();
      std::ifstream bin(file, std::ios::binary);
      if (!bin) throw Error(ErrorCode::Io, "cannot read observation sidecar " + file.string());
      blob.assign(std::istreambuf_iterator<char>(bin), {});
    }
    for (const auto& jf : j.at("frames")) {
      FrameObservations f;
      f.index = jf.at("idx");
      const auto& gp = jf.at("gt_pose");
      f.ground_truth = {gp.at("pan"), gp.at("tilt"), gp.at("focal")};
      for (const auto& box : jf.at("boxes")) f.player_boxes.push_back({box.at(0), box.at(1), box.at(2), box.at(3)});
      if (sidecar) {
        const std::size_t count = jf.at("obs_count");
        for (std::size_t i = 0; i < count; ++i) {
          Observation o;
          o.pixel.x() = take(blob, pos);
          o.pixel.y() = take(blob, pos);
          const double id = take(blob, pos);
          if (id >= 0) o.true_landmark_id = static_cast<int>(id);
          o.descriptor.resize(dim);
          for (int k = 0; k < dim; ++k) o.descriptor(k) = take(blob, pos);
          f.observations.push_back(std::move(o));
        }
      } else {
        for (const auto& jo : jf.at("obs")) {
          Observation o;
          o.pixel = Pixel(jo.at("x"), jo.at("y"));
          o.descriptor = json_vec(jo.at("desc"));
          if (!jo.at("gt_id").is_null()) o.true_landmark_id = jo.at("gt_id").get<int>();
          f.observations.push_back(std::move(o));
        }
      }
      if (f.index != static_cast<int>(b.frames.size())) throw Error(ErrorCode::Io, "bundle frames are not contiguous");
      b.frames.push_back(std::move(f));
    }
    if (sidecar && pos != blob.size()) throw Error(ErrorCode::Io, "observation sidecar has trailing data");
    // Pattern groups are recovered from shared latents.
    std::vector<int> group(b.scene.landmarks.size(), -1);
    for (std::size_t i = 0; i < b.scene.landmarks.size(); ++i) {
      if (group[i] >= 0) continue;
      std::vector<int> members{static_cast<int>(i)};
      for (std::size_t k = i + 1; k < b.scene.landmarks.size(); ++k)
        if (group[k] < 0 && b.scene.landmarks[k].latent == b.scene.landmarks[i].latent) members.push_back(static_cast<int>(k));
      if (members.size() < 2) continue;
      const int g = static_cast<int>(b.scene.pattern_groups.size());
      for (int m : members) {
        group[m] = g;
        b.scene.landmarks[m].group = g;
      }
      b.scene.pattern_groups.push_back(std::move(members));
    }
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, "malformed bundle " + path.string() + ": " + e.what());
  }
}

}  // namespace ptz
