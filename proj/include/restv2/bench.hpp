#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "restv2/model.hpp"

namespace restv2 {

struct BenchOptions {
  Spatial geometry{224, 224};
  std::size_t batch = 1;
  std::size_t warmup_iters = 1;
  std::size_t timed_iters = 3;
  std::uint64_t seed = 42;
};

struct PhaseTiming {
  std::string phase;  // stem, stage0..stage3, head
  double median_ms = 0;
};

struct BenchResult {
  std::size_t batch = 0;
  std::vector<double> run_ms;  // one entry per timed iteration
  double median_ms = 0;
  double images_per_second = 0;
  std::vector<PhaseTiming> phases;
  std::uint64_t flops_per_image = 0;
  /// Compute-density proxy: counted FLOPs per second of wall clock.
  double flops_per_second = 0;
};

/// Wall-clock forward passes on a synthetic batch. Throws UsageError when
/// timed_iters is 0.
template <typename T>
BenchResult bench_throughput(const Model<T>& model, const BenchOptions& options);

}  // namespace restv2
