#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "restv2/tensor.hpp"

namespace restv2 {

inline constexpr std::size_t kSpectrumBins = 32;
inline constexpr double kLogAmplitudeFloor = 1e-12;

/// Radially binned log amplitude spectrum of a (C, H, W) feature map.
///
/// Each channel is transformed with a 2-D DFT; amplitudes are averaged over
/// channels. A frequency (fy, fx) has radius rho = |(fy / (H/2), fx / (W/2))|,
/// so 1.0 is the Nyquist frequency along either axis; corners with rho > 1 are
/// dropped. Bin i collects rho in [i/32, (i+1)/32), the last bin also takes
/// rho == 1. Empty bins are omitted.
struct SpectrumProfile {
  std::vector<double> radial_bins;    // mean rho of the bin, ascending
  std::vector<double> log_amplitude;  // ln(max(mean amplitude, 1e-12))
  std::vector<std::size_t> counts;    // frequencies per bin
  double delta_log_amplitude = 0;     // last bin minus first bin
};

/// Throws DimensionError unless feature is (C, H, W) with H, W >= 4.
SpectrumProfile delta_log_amplitude(const TensorD& feature);

/// Two-column `rho,log_amplitude` CSV.
std::string spectrum_csv(const SpectrumProfile& profile);

}  // namespace restv2
