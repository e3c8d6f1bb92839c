#include "ptz/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "ptz/error.hpp"
#include "ptz/io.hpp"

namespace ptz {

using nlohmann::json;

namespace {

void same_length(std::size_t a, std::size_t b) {
  if (a != b)
    throw Error(ErrorCode::LengthMismatch, std::to_string(a) + " estimates vs " + std::to_string(b) + " ground-truth poses");
}

QuantityStats stats(const std::vector<double>& abs_err) {
  QuantityStats q;
  double sum = 0.0;
  for (double e : abs_err) {
    sum += e;
    q.max = std::max(q.max, e);
  }
  q.mean = sum / static_cast<double>(abs_err.size());
  double var = 0.0;
  for (double e : abs_err) var += (e - q.mean) * (e - q.mean);
  q.stddev = std::sqrt(var / static_cast<double>(abs_err.size()));
  return q;
}

}  // namespace

PoseErrorStats pose_errors(std::span<const CameraPose> estimated, std::span<const CameraPose> truth) {
  same_length(estimated.size(), truth.size());
  if (estimated.empty()) throw Error(ErrorCode::EmptyEvaluation, "no poses");
  std::vector<double> p, t, f;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    p.push_back(std::abs(estimated[i].pan - truth[i].pan));
    t.push_back(std::abs(estimated[i].tilt - truth[i].tilt));
    f.push_back(std::abs(estimated[i].focal - truth[i].focal));
  }
  return {stats(p), stats(t), stats(f)};
}

std::vector<Ray> evaluation_rays(const CameraPose& pose, const ImageSize& size) {
  std::vector<Ray> rays;
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c)
      rays.push_back(back_project(pose, size, {size.width * (c + 0.5) / 9.0, size.height * (r + 0.5) / 9.0}));
  return rays;
}

ReprojStats reprojection_errors(std::span<const CameraPose> estimated, std::span<const CameraPose> truth,
                                std::span<const Ray> eval_rays, const ImageSize& size) {
  same_length(estimated.size(), truth.size());
  std::vector<double> errs;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (const auto& ray : eval_rays) {
      Pixel gt;
      try {
        gt = project_ray(truth[i], size, ray);
      } catch (const Error&) {
        continue;
      }
      if (!size.contains(gt)) continue;
      double e = std::numeric_limits<double>::infinity();
      try {
        e = (project_ray(estimated[i], size, ray) - gt).norm();
      } catch (const Error&) {
      }
      errs.push_back(e);
    }
  }
  if (errs.empty()) throw Error(ErrorCode::EmptyEvaluation, "no evaluation ray is visible");
  ReprojStats s;
  s.count = errs.size();
  double sum = 0.0;
  for (double e : errs) sum += e;
  s.mean = sum / static_cast<double>(errs.size());
  std::sort(errs.begin(), errs.end());
  const std::size_t n = errs.size();
  s.median = n % 2 ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  s.max = errs.back();
  return s;
}

double angular_pose_error(const CameraPose& a, const CameraPose& b) {
  return vector_angle(optical_axis(a), optical_axis(b));
}

double relocalization_correctness(std::span<const std::optional<CameraPose>> estimates,
                                  std::span<const CameraPose> truth, double threshold, bool check_focal,
                                  double focal_tolerance) {
  same_length(estimates.size(), truth.size());
  if (estimates.empty()) throw Error(ErrorCode::EmptyEvaluation, "no relocalization attempts");
  int good = 0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (!estimates[i]) continue;
    if (angular_pose_error(*estimates[i], truth[i]) > threshold) continue;
    if (check_focal && std::abs(estimates[i]->focal - truth[i].focal) / truth[i].focal > focal_tolerance) continue;
    ++good;
  }
  return static_cast<double>(good) / static_cast<double>(estimates.size());
}

// --- summaries -------------------------------------------------------------

TrackingSummary summarize(const std::string& sequence, const TrackResult& result, const SequenceBundle& bundle,
                          TrackerKind tracker) {
  same_length(result.frames.size(), bundle.frames.size());
  TrackingSummary s;
  s.sequence = sequence;
  s.tracker = to_string(tracker);
  std::vector<CameraPose> est, gt;
  for (std::size_t i = 0; i < result.frames.size(); ++i) {
    est.push_back(result.frames[i].estimate);
    gt.push_back(bundle.frames[i].ground_truth);
    s.lost += result.frames[i].status == FrameStatus::Lost;
    s.relocalized += result.frames[i].status == FrameStatus::Relocalized;
  }
  s.frames = static_cast<int>(est.size());
  s.keyframes = static_cast<int>(result.keyframes.size());
  s.velocity = mean_angular_velocity(gt, bundle.fps);
  s.pose = pose_errors(est, gt);
  s.reprojection = reprojection_errors(est, gt, evaluation_rays(gt.front(), bundle.size), bundle.size);
  return s;
}

namespace {

json q_json(const QuantityStats& q) { return {{"mean", q.mean}, {"std", q.stddev}, {"max", q.max}}; }
QuantityStats q_from(const json& j) { return {j.at("mean"), j.at("std"), j.at("max")}; }

}  // namespace

json to_json(const TrackingSummary& s) {
  return {{"kind", "track"},
          {"sequence", s.sequence},
          {"tracker", s.tracker},
          {"velocity_deg_s", s.velocity},
          {"reprojection",
           {{"mean", s.reprojection.mean},
            {"median", s.reprojection.median},
            {"max", s.reprojection.max},
            {"count", s.reprojection.count},
            {"ray_set", s.reprojection.ray_set}}},
          {"pose_error", {{"pan_deg", q_json(s.pose.pan)}, {"tilt_deg", q_json(s.pose.tilt)}, {"focal_px", q_json(s.pose.focal)}}},
          {"frames", s.frames},
          {"lost", s.lost},
          {"relocalized", s.relocalized},
          {"keyframes", s.keyframes}};
}

TrackingSummary tracking_summary_from_json(const json& j) {
  try {
    TrackingSummary s;
    s.sequence = j.at("sequence");
    s.tracker = j.at("tracker");
    s.velocity = j.at("velocity_deg_s");
    const auto& r = j.at("reprojection");
    s.reprojection = {r.at("mean"), r.at("median"), r.at("max"), r.at("count"), r.at("ray_set")};
    const auto& p = j.at("pose_error");
    s.pose = {q_from(p.at("pan_deg")), q_from(p.at("tilt_deg")), q_from(p.at("focal_px"))};
    s.frames = j.at("frames");
    s.lost = j.at("lost");
    s.relocalized = j.at("relocalized");
    s.keyframes = j.at("keyframes");
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed tracking summary: ") + e.what());
  }
}

json to_json(const RelocRow& r) {
  return {{"method", r.method}, {"outlier_ratio", r.outlier_ratio}, {"correctness", r.correctness}, {"trials", r.trials}};
}

RelocRow reloc_row_from_json(const json& j) {
  try {
    return {j.at("method"), j.at("outlier_ratio"), j.at("correctness"), j.at("trials")};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed relocalization row: ") + e.what());
  }
}

// --- tables ----------------------------------------------------------------

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string format_tracking_table(std::span<const TrackingSummary> rows, ReportFormat format) {
  std::vector<TrackingSummary> sorted(rows.begin(), rows.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.sequence, a.tracker) < std::tie(b.sequence, b.tracker);
  });
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "sequence,velocity_deg_s,tracker,reproj_mean_px,reproj_median_px,reproj_max_px,"
           "pan_mae_deg,tilt_mae_deg,focal_mae_px,frames,lost,relocalized\n";
    for (const auto& s : sorted)
      out << s.sequence << ',' << fmt("%.4f", s.velocity) << ',' << s.tracker << ',' << fmt("%.6f", s.reprojection.mean)
          << ',' << fmt("%.6f", s.reprojection.median) << ',' << fmt("%.6f", s.reprojection.max) << ','
          << fmt("%.6f", s.pose.pan.mean) << ',' << fmt("%.6f", s.pose.tilt.mean) << ','
          << fmt("%.6f", s.pose.focal.mean) << ',' << s.frames << ',' << s.lost << ',' << s.relocalized << '\n';
    return out.str();
  }
  std::set<std::string> trackers;
  std::map<std::string, std::map<std::string, const TrackingSummary*>> by_seq;
  for (const auto& s : sorted) {
    trackers.insert(s.tracker);
    by_seq[s.sequence][s.tracker] = &s;
  }
  out << "| Sequence | Velocity (deg/s) |";
  for (const auto& t : trackers) out << ' ' << t << " mean | " << t << " median | " << t << " max |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < trackers.size(); ++i) out << "---|---|---|";
  out << '\n';
  for (const auto& [seq, cols] : by_seq) {
    out << "| " << seq << " | " << fmt("%.2f", cols.begin()->second->velocity) << " |";
    for (const auto& t : trackers) {
      const auto it = cols.find(t);
      if (it == cols.end()) {
        out << " - | - | - |";
        continue;
      }
      const auto& r = it->second->reprojection;
      out << ' ' << fmt("%.2f", r.mean) << " | " << fmt("%.2f", r.median) << " | " << fmt("%.2f", r.max) << " |";
    }
    out << '\n';
  }
  return out.str();
}

std::string format_reloc_table(std::span<const RelocRow> rows, ReportFormat format) {
  std::vector<RelocRow> sorted(rows.begin(), rows.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.outlier_ratio, a.method) < std::tie(b.outlier_ratio, b.method);
  });
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "outlier_pct,method,correctness,trials\n";
    for (const auto& r : sorted)
      out << fmt("%.0f", 100.0 * r.outlier_ratio) << ',' << r.method << ',' << fmt("%.4f", r.correctness) << ','
          << r.trials << '\n';
    return out.str();
  }
  std::set<std::string> methods;
  std::map<double, std::map<std::string, const RelocRow*>> by_ratio;
  for (const auto& r : sorted) {
    methods.insert(r.method);
    by_ratio[r.outlier_ratio][r.method] = &r;
  }
  out << "| Outliers (%) |";
  for (const auto& m : methods) out << ' ' << m << " (%) |";
  out << "\n|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& [ratio, cols] : by_ratio) {
    out << "| " << fmt("%.0f", 100.0 * ratio) << " |";
    for (const auto& m : methods) {
      const auto it = cols.find(m);
      out << ' ' << (it == cols.end() ? std::string("-") : fmt("%.1f", 100.0 * it->second->correctness)) << " |";
    }
    out << '\n';
  }
  return out.str();
}

void emit_report(std::span<const TrackingSummary> tracking, std::span<const RelocRow> reloc, ReportFormat format,
                 const std::filesystem::path& out) {
  std::string text;
  if (!tracking.empty()) text += format_tracking_table(tracking, format);
  if (!reloc.empty()) {
    if (!text.empty()) text += '\n';
    text += format_reloc_table(reloc, format);
  }
  write_file_atomic(out, text);
}

}  // namespace ptz
