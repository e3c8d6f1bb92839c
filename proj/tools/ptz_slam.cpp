// ptz-slam: simulate, track, reloc-bench, report.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ptz/commands.hpp"
#include "ptz/error.hpp"
#include "ptz/log.hpp"

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

ptz::RelocalizerKind parse_method(const std::string& m) {
  if (m == "forest") return ptz::RelocalizerKind::Forest;
  if (m == "keyframe") return ptz::RelocalizerKind::Keyframe;
  if (m == "nns") return ptz::RelocalizerKind::Nns;
  throw ptz::Error(ptz::ErrorCode::InvalidArgument, "--methods: unknown method \"" + m + "\"");
}

// 1: bad input (usage, config, files). 2: estimation failed at runtime.
int exit_code(ptz::ErrorCode code) {
  switch (code) {
    case ptz::ErrorCode::Config:
    case ptz::ErrorCode::InvalidArgument:
    case ptz::ErrorCode::Io:
      return 1;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PTZ camera tracking and relocalization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ptz::kToolVersion);

  std::optional<std::uint64_t> seed;
  std::string config, out, bundle, pipeline, outliers = "10,20,30,40,50", methods = "forest,keyframe,nns", format = "md";
  int trials = 100;
  std::vector<std::string> dirs;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic sequence bundle");
  sim->add_option("--config", config, "simulation config (JSON)")->required();
  sim->add_option("--out", out, "bundle path")->required();
  sim->add_option("--seed", seed, "overrides every seed in the config");

  auto* track = app.add_subcommand("track", "run the tracking pipeline on a bundle");
  track->add_option("--bundle", bundle, "sequence bundle")->required();
  track->add_option("--pipeline", pipeline, "pipeline config (JSON)")->required();
  track->add_option("--out", out, "output directory")->required();
  track->add_option("--seed", seed, "overrides every seed in the config");

  auto* bench = app.add_subcommand("reloc-bench", "relocalization correctness versus outlier ratio");
  bench->add_option("--bundle", bundle, "sequence bundle")->required();
  bench->add_option("--outliers", outliers, "outlier percentages, comma separated");
  bench->add_option("--methods", methods, "forest,keyframe,nns");
  bench->add_option("--trials", trials, "trials per outlier ratio")->check(CLI::PositiveNumber);
  bench->add_option("--pipeline", pipeline, "pipeline config for keyframe, forest and RANSAC settings");
  bench->add_option("--out", out, "output directory")->required();
  bench->add_option("--seed", seed, "overrides every seed");

  auto* report = app.add_subcommand("report", "aggregate result directories into tables");
  report->add_option("dirs", dirs, "result directories")->required();
  report->add_option("--out", out, "output file")->required();
  report->add_option("--format", format, "csv or md")->check(CLI::IsMember({"csv", "md"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*sim) {
      ptz::cmd_simulate(config, out, seed);
    } else if (*track) {
      // cmd_track already warns about lost frames on stderr
      const auto r = ptz::cmd_track(bundle, pipeline, out, seed);
      std::cout << r.summary.sequence << " " << r.summary.tracker << ": reprojection mean "
                << r.summary.reprojection.mean << " px, max " << r.summary.reprojection.max << " px\n";
    } else if (*bench) {
      ptz::RelocBenchOptions opts;
      opts.trials = trials;
      opts.outlier_ratios.clear();
      for (const auto& p : split(outliers)) {
        std::size_t used = 0;
        double v = 0;
        try {
          v = std::stod(p, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != p.size() || v < 0 || v > 100)
          throw ptz::Error(ptz::ErrorCode::InvalidArgument, "--outliers: bad percentage \"" + p + "\"");
        opts.outlier_ratios.push_back(v / 100.0);
      }
      opts.methods.clear();
      for (const auto& m : split(methods)) opts.methods.push_back(parse_method(m));
      std::optional<std::filesystem::path> pipe;
      if (!pipeline.empty()) pipe = pipeline;
      const auto rows = ptz::cmd_reloc_bench(bundle, pipe, opts, seed, out);
      std::cout << ptz::format_reloc_table(rows, ptz::ReportFormat::Markdown);
    } else if (*report) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      ptz::cmd_report(paths, out, format == "csv" ? ptz::ReportFormat::Csv : ptz::ReportFormat::Markdown);
    }
  } catch (const ptz::Error& e) {
    ptz::log(ptz::LogLevel::Error, e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    ptz::log(ptz::LogLevel::Error, e.what());
    return 2;
  }
  return 0;
}
