// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Everything runs in-process from the shipped presets.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ptz/bench.hpp"
#include "ptz/camera.hpp"
#include "ptz/commands.hpp"
#include "ptz/error.hpp"
#include "ptz/forest.hpp"
#include "ptz/metrics.hpp"
#include "ptz/pipeline.hpp"
#include "ptz/pose_solvers.hpp"
#include "ptz/random.hpp"
#include "ptz/simulator.hpp"

using namespace ptz;
namespace fs = std::filesystem;

namespace {

const ImageSize k720{1280, 720};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path preset(const std::string& name) { return preset_directory() / (name + ".json"); }

SimulationConfig sim_preset(const std::string& name) { return simulation_config_from_json(load_config(preset(name))); }
PipelineConfig pipe_preset(const std::string& name) { return pipeline_config_from_json(load_config(preset(name))); }

CameraPose random_pose(Rng& rng) { return {rng.uniform(-60, 60), rng.uniform(-40, 40), rng.uniform(500, 5000)}; }

Ray random_visible_ray(const CameraPose& pose, Rng& rng) {
  for (;;) {
    try {
      return back_project(pose, k720, {rng.uniform(0, k720.width), rng.uniform(0, k720.height)});
    } catch (const Error&) {
    }
  }
}

// --- 1 -------------------------------------------------------------------

Outcome geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_angle = 0;
  for (int i = 0; i < 100000; ++i) {
    const auto pose = random_pose(rng);
    const auto ray = random_visible_ray(pose, rng);
    worst_angle = std::max(worst_angle, ray_angle(ray, back_project(pose, k720, project_ray(pose, k720, ray))));
  }
  // Projecting a world point through the full camera equals projecting its
  // tripod ray through the pan/tilt/zoom part.
  PtzBase court = default_base();
  double worst_px = 0;
  int points = 0;
  while (points < 100000) {
    PtzBase base = court;
    base.center += Eigen::Vector3d(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-2, 5));
    const Eigen::Vector3d x(rng.uniform(-14, 14), rng.uniform(-7, 7), rng.uniform(0, 2));
    Ray ray;
    try {
      ray = world_point_to_ray(base, x);
    } catch (const Error&) {
      continue;
    }
    const CameraPose pose{ray.theta + rng.uniform(-5, 5), ray.phi + rng.uniform(-3, 3), rng.uniform(1000, 4000)};
    try {
      worst_px = std::max(worst_px, (project_world_point(base, pose, k720, x) - project_ray(pose, k720, ray)).norm());
    } catch (const Error&) {
      continue;
    }
    ++points;
  }
  const double secs = seconds_since(t0);
  return {worst_angle <= 1e-9 && worst_px <= 1e-9 && secs < 5.0,
          fmt("round trip max %.2e deg, factorization max %.2e px, %.2f s", worst_angle, worst_px, secs)};
}

// --- 2 -------------------------------------------------------------------

Outcome jacobian() {
  Rng rng(102);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto pose = random_pose(rng);
    const auto ray = random_visible_ray(pose, rng);
    const auto analytic = projection_jacobian(pose, k720, ray);
    Eigen::Matrix<double, 2, 5> numeric;
    const double steps[5] = {1e-5, 1e-5, 1e-3, 1e-5, 1e-5};
    for (int k = 0; k < 5; ++k) {
      double p[5] = {pose.pan, pose.tilt, pose.focal, ray.theta, ray.phi}, m[5];
      std::copy(p, p + 5, m);
      p[k] += steps[k];
      m[k] -= steps[k];
      numeric.col(k) = (project_ray({p[0], p[1], p[2]}, k720, {p[3], p[4]}) -
                        project_ray({m[0], m[1], m[2]}, k720, {m[3], m[4]})) /
                       (2 * steps[k]);
    }
    worst = std::max(worst, (analytic - numeric).norm() / numeric.norm());
  }
  return {worst < 1e-4, fmt("max relative error %.2e over 1000 inputs", worst)};
}

// --- 3 -------------------------------------------------------------------

Outcome two_point() {
  Rng rng(103);
  int exact = 0;
  double worst_angle = 0, worst_focal = 0;
  for (int i = 0; i < 1000; ++i) {
    const CameraPose truth{rng.uniform(-50, 50), rng.uniform(-35, 35), rng.uniform(800, 5000)};
    auto pair = [&] {
      const Pixel p(rng.uniform(0, k720.width), rng.uniform(0, k720.height));
      return PixelRay{p, back_project(truth, k720, p)};
    };
    PixelRay a = pair(), b = pair();
    while ((a.pixel - b.pixel).norm() < 20) b = pair();
    try {
      const auto pose = solve_two_point(a, b, k720);
      const double da = std::max(std::abs(pose.pan - truth.pan), std::abs(pose.tilt - truth.tilt));
      const double df = std::abs(pose.focal - truth.focal);
      worst_angle = std::max(worst_angle, da);
      worst_focal = std::max(worst_focal, df);
      exact += da <= 1e-6 && df <= 1e-3;
    } catch (const Error&) {
    }
  }
  // Degenerate inputs must raise, not return a pose.
  auto raises = [](ErrorCode code, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code() == code;
    }
    return false;
  };
  const CameraPose truth{0, 0, 2000};
  const PixelRay a{project_ray(truth, k720, {1, 1}), {1, 1}};
  const bool degenerate = raises(ErrorCode::Degenerate, [&] { solve_two_point(a, a, k720); }) &&
                          raises(ErrorCode::Degenerate, [&] { solve_two_point(a, {Pixel(100, 100), {1, 1}}, k720); }) &&
                          raises(ErrorCode::NoSolution, [&] {
                            solve_two_point({Pixel(100, 360), {0, 0}}, {Pixel(1100, 360), {0.05, 0}}, k720);
                          });
  return {exact == 1000 && degenerate,
          fmt("%d/1000 exact (max %.1e deg, %.1e px); degenerate inputs %s", exact, worst_angle, worst_focal,
              degenerate ? "rejected" : "NOT rejected")};
}

// --- 4 -------------------------------------------------------------------

Outcome tracking_comparison() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ptz = pipe_preset("track_ekf_ptz"), h = pipe_preset("track_ekf_h");
  bool ok = true;
  int h_worse = 0;
  double fast_ratio = 0;
  std::string detail;
  for (int s = 1; s <= 4; ++s) {
    const auto bundle = simulate(sim_preset("table1_seq" + std::to_string(s)));
    const auto first = bundle.frames.front().ground_truth;
    const auto a = summarize("seq", run_tracking(bundle, ptz, first), bundle, TrackerKind::EkfPtz);
    const auto b = summarize("seq", run_tracking(bundle, h, first), bundle, TrackerKind::EkfH);
    ok &= a.reprojection.mean <= 1.0 && a.reprojection.max <= 2.0;
    h_worse += b.reprojection.max > a.reprojection.max;
    if (s == 3) fast_ratio = b.reprojection.max / a.reprojection.max;
    detail += fmt("seq%d %.2f deg/s ptz %.2f/%.2f h %.2f/%.2f; ", s, a.velocity, a.reprojection.mean,
                  a.reprojection.max, b.reprojection.mean, b.reprojection.max);
  }
  const double secs = seconds_since(t0);
  ok &= h_worse >= 3 && fast_ratio >= 5.0 && secs < 120;
  return {ok, detail + fmt("ekf_h max worse on %d/4, fast-reversal ratio %.1f, %.0f s", h_worse, fast_ratio, secs)};
}

// --- 5 / 6 -----------------------------------------------------------------

std::map<std::pair<std::string, int>, double> reloc_table(const std::string& sim, std::vector<double> ratios,
                                                          std::vector<RelocalizerKind> methods) {
  const auto bundle = simulate(sim_preset(sim));
  const auto config = pipe_preset("reloc_bench");
  const auto map = build_reloc_map(bundle, config);
  RelocBenchOptions options;
  options.outlier_ratios = std::move(ratios);
  options.methods = std::move(methods);
  options.trials = 100;
  std::map<std::pair<std::string, int>, double> out;
  for (const auto& row : run_reloc_bench(bundle, map, config, options))
    out[{row.method, static_cast<int>(std::lround(row.outlier_ratio * 100))}] = row.correctness;
  return out;
}

Outcome relocalization_comparison() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto t = reloc_table("reloc_3600", {0.1, 0.2, 0.3, 0.4, 0.5}, {RelocalizerKind::Forest, RelocalizerKind::Keyframe});
  bool ok = true;
  std::string detail;
  for (int pct : {10, 20, 30, 40, 50}) {
    const double f = t.at({"forest", pct}), k = t.at({"keyframe", pct});
    ok &= f >= 0.95 && (pct > 40 || f >= 0.99);
    if (pct >= 30) ok &= f > k;
    detail += fmt("%d%%: forest %.0f keyframe %.0f; ", pct, 100 * f, 100 * k);
  }
  ok &= t.at({"keyframe", 40}) <= 0.75 && t.at({"keyframe", 50}) <= 0.60;
  const double secs = seconds_since(t0);
  ok &= secs < 600;
  return {ok, detail + fmt("%.0f s", secs)};
}

Outcome repeated_patterns() {
  const auto t = reloc_table("reloc_repeated", {0.3}, {RelocalizerKind::Forest, RelocalizerKind::Nns});
  const double f = t.at({"forest", 30}), n = t.at({"nns", 30});
  return {f - n >= 0.10, fmt("30%% outliers: forest %.0f%%, nns %.0f%% (gap %.0f points)", 100 * f, 100 * n, 100 * (f - n))};
}

// --- 7 -------------------------------------------------------------------

Outcome online_forest() {
  // Keyframe-sized batches from a sweep; held-out examples are later
  // observations of the same landmarks.
  auto sim = sim_preset("reloc_3600");
  sim.noise.dropout_ratio = 0.0;
  const auto bundle = simulate(sim);
  auto examples_of = [&](int frame) {
    std::vector<TrainingExample> ex;
    const auto& f = bundle.frames[frame];
    for (const auto& o : f.observations)
      if (o.true_landmark_id) ex.push_back({o.descriptor, back_project(f.ground_truth, bundle.size, o.pixel)});
    return ex;
  };
  const ForestParams params = pipe_preset("reloc_bench").forest;
  std::vector<std::vector<TrainingExample>> batches;
  for (int k = 0; k <= 10; ++k) batches.push_back(examples_of(30 * k));
  std::vector<TrainingExample> held_out;
  for (int k = 0; k <= 10; ++k) {
    const auto more = examples_of(30 * k + 15);
    held_out.insert(held_out.end(), more.begin(), more.end());
  }

  Forest online;
  ExampleReservoir reservoir;
  online_update(online, reservoir, batches[0], 0, params);
  std::vector<TrainingExample> cumulative = batches[0];
  double t_online = 0, t_batch = 0;
  Forest batch;
  for (int k = 1; k <= 10; ++k) {
    auto t0 = std::chrono::steady_clock::now();
    online_update(online, reservoir, batches[k], k, params);
    t_online += seconds_since(t0);
    cumulative.insert(cumulative.end(), batches[k].begin(), batches[k].end());
    t0 = std::chrono::steady_clock::now();
    batch = train_forest(cumulative, params);
    t_batch += seconds_since(t0);
  }
  const double acc_online = forest_correctness(online, held_out, 0.1);
  const double acc_batch = forest_correctness(batch, held_out, 0.1);
  const double rel = std::abs(acc_online - acc_batch) / acc_batch;
  return {rel <= 0.05 && t_online < 0.5 * t_batch,
          fmt("accuracy online %.3f vs batch %.3f (%.1f%% apart); time %.3f s vs %.3f s (%.0f%%)", acc_online,
              acc_batch, 100 * rel, t_online, t_batch, 100 * t_online / t_batch)};
}

// --- 8 -------------------------------------------------------------------

Outcome player_filter() {
  int ok = 0;
  double in_box = 0, total = 0;
  std::string detail;
  for (int t = 0; t < 10; ++t) {
    auto sim = sim_preset("player_filter");
    sim.noise.seed = 500 + t;
    const auto bundle = simulate(sim);
    for (const auto& f : bundle.frames)
      for (const auto& o : f.observations) {
        total += 1;
        for (const auto& b : f.player_boxes)
          if (b.contains(o.pixel)) {
            in_box += 1;
            break;
          }
      }
    auto config = pipe_preset("track_ekf_ptz");
    std::vector<CameraPose> gt;
    for (const auto& f : bundle.frames) gt.push_back(f.ground_truth);
    double err[2];
    for (int use = 0; use < 2; ++use) {
      config.use_player_filter = use == 1;
      std::vector<CameraPose> est;
      for (const auto& f : run_tracking(bundle, config, gt.front()).frames) est.push_back(f.estimate);
      err[use] = pose_errors(est, gt).pan.mean;
    }
    ok += err[1] < err[0] || (err[1] == err[0] && err[1] < 0.02);
    detail += fmt("%.4f/%.4f ", err[1], err[0]);
  }
  return {ok == 10, fmt("%d/10 trials improved; %.0f%% of observations in boxes; pan MAE filter/no-filter: ", ok,
                        100 * in_box / total) +
                        detail};
}

// --- 9 -------------------------------------------------------------------

Outcome soccer_zoom() {
  const auto bundle = simulate(sim_preset("soccer_zoom"));
  const auto s = summarize("soccer", run_tracking(bundle, pipe_preset("track_soccer"), bundle.frames.front().ground_truth),
                           bundle, TrackerKind::EkfPtz);
  const double f0 = bundle.frames.front().ground_truth.focal, f1 = bundle.frames.back().ground_truth.focal;
  return {s.pose.focal.mean <= 60 && s.pose.pan.mean <= 0.2,
          fmt("focal %.0f -> %.0f px: mean |df| %.2f px, mean |dpan| %.4f deg", f0, f1, s.pose.focal.mean,
              s.pose.pan.mean)};
}

// --- 10 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string manifest_sans_time(const fs::path& p) {
  auto j = nlohmann::json::parse(slurp(p));
  j.erase("wall_clock_seconds");
  return j.dump();
}

Outcome determinism() {
  // The same commands twice into the same directory; outputs are captured
  // after each run and compared.
  const fs::path r = fs::temp_directory_path() / "ptz_acceptance_determinism";
  const std::vector<std::string> files{"seq.json",          "track/track.csv", "track/summary.json",
                                       "reloc.json",        "bench/reloc.json", "bench/reloc.csv",
                                       "bench/reloc.md"};
  std::vector<std::map<std::string, std::string>> runs;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(r);
    fs::create_directories(r);
    cmd_simulate(preset("table1_seq3"), r / "seq.json", 7);
    cmd_track(r / "seq.json", preset("track_ekf_ptz"), r / "track", 7);
    cmd_simulate(preset("reloc_3600"), r / "reloc.json", 7);
    RelocBenchOptions options;
    options.trials = 10;
    cmd_reloc_bench(r / "reloc.json", preset("reloc_bench"), options, 7, r / "bench");
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[f] = slurp(r / f);
    for (const char* f : {"seq.json.obs.bin", "reloc.json.obs.bin"})
      if (fs::exists(r / f)) out[f] = slurp(r / f);
    // Manifests carry wall-clock time; everything else must match.
    for (const char* m : {"track/manifest.json", "bench/manifest.json"}) out[m] = manifest_sans_time(r / m);
    runs.push_back(std::move(out));
  }
  fs::remove_all(r);
  std::vector<std::string> differ;
  for (const auto& [name, content] : runs[0])
    if (content.empty() || content != runs[1].at(name)) differ.push_back(name);
  std::string detail = fmt("%zu outputs of simulate, track and reloc-bench identical", runs[0].size());
  if (!differ.empty()) {
    detail = "differ:";
    for (const auto& d : differ) detail += " " + d;
  }
  return {differ.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"geometry exactness", geometry},        {"projection jacobian", jacobian},
      {"two-point solver", two_point},         {"tracking table", tracking_comparison},
      {"relocalization table", relocalization_comparison},        {"repeated patterns", repeated_patterns},
      {"online forest", online_forest},        {"player filter", player_filter},
      {"soccer zoom", soccer_zoom},            {"determinism", determinism},
  };
  // Optional argument: run only the listed criterion numbers.
  std::vector<bool> wanted(criteria.size(), argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n >= 1 && n <= static_cast<int>(criteria.size())) wanted[n - 1] = true;
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!wanted[i]) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %-22s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
