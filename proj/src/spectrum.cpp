#include "restv2/spectrum.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>

#include "restv2/errors.hpp"
#include "restv2/report.hpp"

namespace restv2 {

namespace {

// FFTW's planner is not thread-safe; execution with a given plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

double signed_frequency(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace

SpectrumProfile delta_log_amplitude(const TensorD& feature) {
  if (feature.rank() != 3) throw DimensionError("spectrum expects (C, H, W), got " + shape_str(feature.shape()));
  const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  if (c == 0 || h < 4 || w < 4) {
    throw DimensionError("spectrum needs at least one channel and extents >= 4, got " + shape_str(feature.shape()));
  }
  const std::size_t plane = h * w;
  std::unique_ptr<fftw_complex, FftwFree> in(fftw_alloc_complex(plane));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(plane));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), in.get(), out.get(), FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  std::vector<double> amplitude(plane, 0.0);
  const auto& v = feature.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      in.get()[i][0] = v[ch * plane + i];
      in.get()[i][1] = 0.0;
    }
    fftw_execute(plan);
    for (std::size_t i = 0; i < plane; ++i) amplitude[i] += std::hypot(out.get()[i][0], out.get()[i][1]);
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }

  std::vector<double> sum(kSpectrumBins, 0.0), rho_sum(kSpectrumBins, 0.0);
  std::vector<std::size_t> count(kSpectrumBins, 0);
  const double half_h = static_cast<double>(h) / 2.0, half_w = static_cast<double>(w) / 2.0;
  for (std::size_t ky = 0; ky < h; ++ky) {
    const double fy = signed_frequency(ky, h) / half_h;
    for (std::size_t kx = 0; kx < w; ++kx) {
      const double fx = signed_frequency(kx, w) / half_w;
      const double rho = std::sqrt(fy * fy + fx * fx);
      if (rho > 1.0 + 1e-12) continue;
      const auto bin = std::min<std::size_t>(kSpectrumBins - 1, static_cast<std::size_t>(rho * kSpectrumBins));
      sum[bin] += amplitude[ky * w + kx] / static_cast<double>(c);
      rho_sum[bin] += rho;
      ++count[bin];
    }
  }

  SpectrumProfile p;
  for (std::size_t b = 0; b < kSpectrumBins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    p.radial_bins.push_back(rho_sum[b] / n);
    p.log_amplitude.push_back(std::log(std::max(sum[b] / n, kLogAmplitudeFloor)));
    p.counts.push_back(count[b]);
  }
  p.delta_log_amplitude = p.log_amplitude.back() - p.log_amplitude.front();
  return p;
}

std::string spectrum_csv(const SpectrumProfile& profile) {
  CsvTable t({"rho", "log_amplitude"});
  for (std::size_t i = 0; i < profile.radial_bins.size(); ++i) {
    t.add_row({format_number(profile.radial_bins[i]), format_number(profile.log_amplitude[i])});
  }
  return t.str();
}

}  // namespace restv2
