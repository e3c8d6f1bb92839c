#pragma once

// The CLI commands as library functions. Each writes its outputs plus a
// manifest.json (manifest for `simulate` sits next to the bundle as
// <bundle>.manifest.json).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ptz/bench.hpp"
#include "ptz/metrics.hpp"
#include "ptz/pipeline.hpp"
#include "ptz/simulator.hpp"

namespace ptz {

inline constexpr const char* kToolVersion = "0.1.0";

/// PTZ_PRESET_DIR from the environment, else the presets/ directory of the
/// source tree.
std::filesystem::path preset_directory();

/// Reads a JSON config. A "preset": "<name>" key loads <name>.json (next to
/// the config, else from the preset directory) and the config's own keys are
/// merged over it (JSON merge patch). Presets may chain.
nlohmann::json load_config(const std::filesystem::path& path);

void apply_seed(SimulationConfig& config, std::uint64_t seed);

void cmd_simulate(const std::filesystem::path& config, const std::filesystem::path& out,
                  std::optional<std::uint64_t> seed);

struct TrackOutcome {
  TrackingSummary summary;
  int lost_frames = 0;
};

/// Writes track.csv, summary.json and manifest.json into out_dir.
TrackOutcome cmd_track(const std::filesystem::path& bundle, const std::filesystem::path& pipeline,
                       const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed);

/// Writes reloc.json, reloc.csv, reloc.md and manifest.json into out_dir.
/// Without a pipeline file the built-in defaults are used.
std::vector<RelocRow> cmd_reloc_bench(const std::filesystem::path& bundle,
                                      const std::optional<std::filesystem::path>& pipeline,
                                      RelocBenchOptions options, std::optional<std::uint64_t> seed,
                                      const std::filesystem::path& out_dir);

/// Aggregates summary.json / reloc.json from result directories.
void cmd_report(std::span<const std::filesystem::path> dirs, const std::filesystem::path& out, ReportFormat format);

}  // namespace ptz
