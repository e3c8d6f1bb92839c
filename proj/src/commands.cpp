#include "ptz/commands.hpp"

#include <chrono>
#include <cstdlib>

#include "ptz/error.hpp"
#include "ptz/io.hpp"
#include "ptz/log.hpp"

#ifndef PTZ_PRESET_DIR
#define PTZ_PRESET_DIR "presets"
#endif

namespace ptz {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path preset_directory() {
  if (const char* env = std::getenv("PTZ_PRESET_DIR"); env && *env) return env;
  return PTZ_PRESET_DIR;
}

namespace {

json load_config_depth(const fs::path& path, int depth) {
  if (depth > 16) throw Error(ErrorCode::Config, path.string() + ": preset chain too deep");
  json j = read_json_file(path);
  if (!j.is_object()) throw Error(ErrorCode::Config, path.string() + ": expected a JSON object");
  if (!j.contains("preset")) return j;
  if (!j["preset"].is_string()) throw Error(ErrorCode::Config, "preset: expected a preset name");
  const std::string name = j["preset"];
  fs::path base = path.parent_path() / (name + ".json");
  if (!fs::exists(base)) base = preset_directory() / (name + ".json");
  if (!fs::exists(base)) throw Error(ErrorCode::Config, "preset: unknown preset \"" + name + "\"");
  json merged = load_config_depth(base, depth + 1);
  j.erase("preset");
  merged.merge_patch(j);
  merged.erase("preset");
  return merged;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const fs::path& path, const std::string& command, const json& inputs, const json& resolved,
                    const json& seeds, const fs::path& output, double seconds) {
  const json m = {{"command", command},
                  {"inputs", inputs},
                  {"resolved_config", resolved},
                  {"seeds", seeds},
                  {"output", output.string()},
                  {"tool_version", kToolVersion},
                  {"wall_clock_seconds", seconds}};
  write_file_atomic(path, m.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

PipelineConfig load_pipeline(const fs::path& path) {
  try {
    return pipeline_config_from_json(load_config(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw Error(ErrorCode::Config, path.string() + ": " + e.what());
    throw;
  }
}

}  // namespace

json load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "config not found: " + path.string());
  return load_config_depth(path, 0);
}

void apply_seed(SimulationConfig& config, std::uint64_t seed) {
  config.scene.seed = seed;
  config.noise.seed = seed;
}

void cmd_simulate(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed) {
  Stopwatch clock;
  SimulationConfig config;
  try {
    config = simulation_config_from_json(load_config(config_path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw Error(ErrorCode::Config, config_path.string() + ": " + e.what());
    throw;
  }
  if (seed) apply_seed(config, *seed);
  log(LogLevel::Info, "simulating " + std::to_string(config.trajectory.num_frames) + " frames");
  const auto bundle = simulate(config);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_bundle(bundle, out);
  write_manifest(out.string() + ".manifest.json", "simulate", {{"config", config_path.string()}}, to_json(config),
                 {{"scene", config.scene.seed}, {"noise", config.noise.seed}}, out, clock.seconds());
}

TrackOutcome cmd_track(const fs::path& bundle_path, const fs::path& pipeline_path, const fs::path& out_dir,
                       std::optional<std::uint64_t> seed) {
  Stopwatch clock;
  PipelineConfig config = load_pipeline(pipeline_path);
  if (seed) apply_seed(config, *seed);
  const auto bundle = read_bundle(bundle_path);
  if (bundle.frames.empty()) throw Error(ErrorCode::InitializationFailed, "bundle has no frames");
  log(LogLevel::Info, std::string("tracking with ") + to_string(config.tracker));
  const auto result = run_tracking(bundle, config, bundle.frames.front().ground_truth);

  TrackOutcome outcome;
  outcome.summary = summarize(bundle_path.stem().string(), result, bundle, config.tracker);
  outcome.lost_frames = outcome.summary.lost;
  ensure_dir(out_dir);
  write_track_csv(result, bundle, out_dir / "track.csv");
  write_file_atomic(out_dir / "summary.json", to_json(outcome.summary).dump(2) + "\n");
  if (outcome.lost_frames > 0)
    log(LogLevel::Warn, std::to_string(outcome.lost_frames) + " frames were marked lost");
  write_manifest(out_dir / "manifest.json", "track",
                 {{"bundle", bundle_path.string()}, {"pipeline", pipeline_path.string()}}, to_json(config),
                 {{"forest", config.forest.seed}, {"ransac", config.ransac.seed}}, out_dir, clock.seconds());
  return outcome;
}

std::vector<RelocRow> cmd_reloc_bench(const fs::path& bundle_path, const std::optional<fs::path>& pipeline_path,
                                      RelocBenchOptions options, std::optional<std::uint64_t> seed,
                                      const fs::path& out_dir) {
  Stopwatch clock;
  PipelineConfig config = pipeline_path ? load_pipeline(*pipeline_path) : PipelineConfig{};
  if (seed) {
    apply_seed(config, *seed);
    options.seed = *seed;
  }
  const auto bundle = read_bundle(bundle_path);
  const auto map = build_reloc_map(bundle, config);
  log(LogLevel::Info, "map: " + std::to_string(map.keyframes.size()) + " keyframes, " +
                          std::to_string(map.forest.trees.size()) + " trees");
  const auto rows = run_reloc_bench(bundle, map, config, options);

  ensure_dir(out_dir);
  json jrows = json::array();
  for (const auto& r : rows) jrows.push_back(to_json(r));
  write_file_atomic(out_dir / "reloc.json",
                    json{{"kind", "reloc"}, {"keyframes", map.keyframes.size()}, {"rows", jrows}}.dump(2) + "\n");
  write_file_atomic(out_dir / "reloc.csv", format_reloc_table(rows, ReportFormat::Csv));
  write_file_atomic(out_dir / "reloc.md", format_reloc_table(rows, ReportFormat::Markdown));

  json methods = json::array();
  for (auto m : options.methods) methods.push_back(to_string(m));
  json resolved = to_json(config);
  resolved["bench"] = {{"outlier_ratios", options.outlier_ratios}, {"methods", methods}, {"trials", options.trials}};
  write_manifest(out_dir / "manifest.json", "reloc-bench",
                 {{"bundle", bundle_path.string()}, {"pipeline", pipeline_path ? pipeline_path->string() : ""}},
                 resolved, {{"bench", options.seed}, {"forest", config.forest.seed}, {"ransac", config.ransac.seed}},
                 out_dir, clock.seconds());
  return rows;
}

void cmd_report(std::span<const fs::path> dirs, const fs::path& out, ReportFormat format) {
  Stopwatch clock;
  if (dirs.empty()) throw Error(ErrorCode::InvalidArgument, "report needs at least one result directory");
  std::vector<TrackingSummary> tracking;
  std::vector<RelocRow> reloc;
  std::vector<std::string> missing;
  for (const auto& d : dirs) {
    const auto summary = d / "summary.json", rj = d / "reloc.json";
    const bool has_s = fs::exists(summary), has_r = fs::exists(rj);
    if (!has_s && !has_r) {
      missing.push_back(summary.string() + " (or " + rj.string() + ")");
      continue;
    }
    if (has_s) tracking.push_back(tracking_summary_from_json(read_json_file(summary)));
    if (has_r) {
      const json j = read_json_file(rj);
      for (const auto& r : j.at("rows")) reloc.push_back(reloc_row_from_json(r));
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::Io, msg);
  }
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  emit_report(tracking, reloc, format, out);
  json inputs = json::array();
  for (const auto& d : dirs) inputs.push_back(d.string());
  write_manifest(out.string() + ".manifest.json", "report", {{"dirs", inputs}},
                 {{"format", format == ReportFormat::Csv ? "csv" : "md"}}, json::object(), out, clock.seconds());
}

}  // namespace ptz
