#pragma once

// Evaluation: pose errors, reprojection statistics, relocalization
// correctness and the report tables built from them.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptz/camera.hpp"
#include "ptz/pipeline.hpp"

namespace ptz {

struct QuantityStats {
  double mean = 0.0;    // mean absolute error
  double stddev = 0.0;  // population standard deviation of the absolute error
  double max = 0.0;
};

struct PoseErrorStats {
  QuantityStats pan, tilt, focal;  // degrees, degrees, pixels
};

PoseErrorStats pose_errors(std::span<const CameraPose> estimated, std::span<const CameraPose> truth);

inline constexpr const char* kGridRaySet = "grid9x9";

/// 9x9 grid of cell-centre pixels covering the image,
/// back-projected at `pose`.
std::vector<Ray> evaluation_rays(const CameraPose& pose, const ImageSize& size);

struct ReprojStats {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::size_t count = 0;
  std::string ray_set = kGridRaySet;
};

/// Pixel distance between each ray projected with the estimated and the true
/// camera, over rays visible under the true camera.
ReprojStats reprojection_errors(std::span<const CameraPose> estimated, std::span<const CameraPose> truth,
                                std::span<const Ray> eval_rays, const ImageSize& size);

/// Angle between optical axes in degrees; focal is ignored.
double angular_pose_error(const CameraPose& a, const CameraPose& b);

/// Fraction of estimates within `threshold` degrees. With `check_focal`, an
/// estimate also needs |df| / f <= focal_tolerance.
double relocalization_correctness(std::span<const std::optional<CameraPose>> estimates,
                                  std::span<const CameraPose> truth, double threshold = 2.0,
                                  bool check_focal = false, double focal_tolerance = 0.05);

// --- reports -----------------------------------------------------------------

struct TrackingSummary {
  std::string sequence;
  std::string tracker;
  double velocity = 0.0;  // mean ground-truth angular speed, degrees / second
  ReprojStats reprojection;
  PoseErrorStats pose;
  int frames = 0;
  int lost = 0;
  int relocalized = 0;
  int keyframes = 0;
};

TrackingSummary summarize(const std::string& sequence, const TrackResult& result, const SequenceBundle& bundle,
                          TrackerKind tracker);

nlohmann::json to_json(const TrackingSummary& s);
TrackingSummary tracking_summary_from_json(const nlohmann::json& j);

struct RelocRow {
  std::string method;
  double outlier_ratio = 0.0;  // fraction
  double correctness = 0.0;    // fraction
  int trials = 0;
};

nlohmann::json to_json(const RelocRow& r);
RelocRow reloc_row_from_json(const nlohmann::json& j);

enum class ReportFormat { Csv, Markdown };

/// Per sequence: velocity and mean/median/max reprojection per tracker.
std::string format_tracking_table(std::span<const TrackingSummary> rows, ReportFormat format);
/// Correctness per outlier ratio and method.
std::string format_reloc_table(std::span<const RelocRow> rows, ReportFormat format);

/// Writes whichever tables have rows into one file (CSV sections are
/// separated by a blank line).
void emit_report(std::span<const TrackingSummary> tracking, std::span<const RelocRow> reloc,
                 ReportFormat format, const std::filesystem::path& out);

}  // namespace ptz
