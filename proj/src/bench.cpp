#include "restv2/bench.hpp"

#include <algorithm>
#include <chrono>

#include "restv2/errors.hpp"
#include "restv2/flops.hpp"

namespace restv2 {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

template <typename T>
BenchResult bench_throughput(const Model<T>& model, const BenchOptions& options) {
  if (options.timed_iters == 0) throw UsageError("bench needs at least one timed iteration");
  if (options.batch == 0) throw UsageError("bench batch must be positive");
  const auto& cfg = model.config();
  const auto images = synthetic_images<T>(options.batch, cfg.in_channels, options.geometry.height,
                                          options.geometry.width, options.seed);
  using clock = std::chrono::steady_clock;
  const std::vector<std::string> names{"stem", "stage0", "stage1", "stage2", "stage3", "head"};

  auto run = [&](std::vector<double>* phase_ms) {
    auto lap = clock::now();
    auto mark = [&](std::size_t phase) {
      const auto now = clock::now();
      if (phase_ms) (*phase_ms)[phase] = std::chrono::duration<double, std::milli>(now - lap).count();
      lap = now;
    };
    auto x = model.stem_forward(images);
    mark(0);
    for (std::size_t s = 0; s < kStages; ++s) {
      if (s > 0) x = model.patch_embed_forward(s, x);
      x = model.stage_forward(s, x);
      mark(1 + s);
    }
    model.head_forward(x);
    mark(5);
  };

  for (std::size_t i = 0; i < options.warmup_iters; ++i) run(nullptr);

  BenchResult out;
  out.batch = options.batch;
  std::vector<std::vector<double>> per_phase(names.size());
  for (std::size_t i = 0; i < options.timed_iters; ++i) {
    std::vector<double> phase_ms(names.size(), 0.0);
    const auto start = clock::now();
    run(&phase_ms);
    out.run_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - start).count());
    for (std::size_t p = 0; p < names.size(); ++p) per_phase[p].push_back(phase_ms[p]);
  }
  out.median_ms = median(out.run_ms);
  const double seconds = std::max(out.median_ms, 1e-6) / 1000.0;
  out.images_per_second = static_cast<double>(options.batch) / seconds;
  for (std::size_t p = 0; p < names.size(); ++p) out.phases.push_back(PhaseTiming{names[p], median(per_phase[p])});
  out.flops_per_image = count_flops(cfg, options.geometry).total();
  out.flops_per_second = static_cast<double>(out.flops_per_image * options.batch) / seconds;
  return out;
}

template BenchResult bench_throughput(const Model<float>&, const BenchOptions&);
template BenchResult bench_throughput(const Model<double>&, const BenchOptions&);

}  // namespace restv2
