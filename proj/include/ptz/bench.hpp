#pragma once

// Relocalization benchmark: a keyframed map built from a sequence, then
// held-out frames with injected outliers relocalized by each method.

#include <cstdint>
#include <span>
#include <vector>

#include "ptz/forest.hpp"
#include "ptz/metrics.hpp"
#include "ptz/pipeline.hpp"
#include "ptz/random.hpp"
#include "ptz/simulator.hpp"

namespace ptz {

struct RelocMap {
  Forest forest;
  ExampleReservoir reservoir;
  std::vector<Keyframe> keyframes;
  std::vector<char> is_keyframe;  // per frame
};

/// Walks the sequence at its ground-truth poses, applies the keyframe rule
/// and feeds each keyframe's landmark observations (back-projected at the
/// keyframe pose) to online_update. Throws InvalidArgument with fewer than
/// two keyframes.
RelocMap build_reloc_map(const SequenceBundle& sequence, const PipelineConfig& config);

/// Replaces round(ratio * n) randomly chosen observations by outliers: a
/// uniform pixel and a standard normal descriptor.
std::vector<Observation> inject_outliers(std::span<const Observation> observations, double ratio,
                                         const ImageSize& size, Rng& rng);

struct RelocBenchOptions {
  std::vector<double> outlier_ratios{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<RelocalizerKind> methods{RelocalizerKind::Forest, RelocalizerKind::Keyframe, RelocalizerKind::Nns};
  int trials = 100;
  std::uint64_t seed = 0;
};

/// Trial t uses the same held-out frame and the same corrupted observations
/// for every method, so methods are compared on paired data.
std::vector<RelocRow> run_reloc_bench(const SequenceBundle& sequence, const RelocMap& map,
                                      const PipelineConfig& config, const RelocBenchOptions& options);

}  // namespace ptz
