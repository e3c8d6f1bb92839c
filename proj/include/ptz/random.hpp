#pragma once

#include <cstdint>
#include <random>

namespace ptz {

/// Seeded random stream with portable distributions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard library distributions are implementation-defined,
/// so uniform/normal draws are derived here from raw engine output. Streams
/// are split by (seed, stream id) so that e.g. every frame of a sequence can
/// be generated independently of the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ptz
