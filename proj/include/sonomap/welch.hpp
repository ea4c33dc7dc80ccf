#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "sonomap/fft.hpp"
#include "sonomap/wav.hpp"

namespace sonomap {

struct PsdEstimate {
  std::vector<double> frequencies;  // Hz, length segment_len/2 + 1
  std::vector<double> psd;          // one-sided power density, power per Hz
};

/// Welch PSD with a periodic Hann window over overlapping segments.
/// segment_len must be a power of two.
inline PsdEstimate welch_psd(std::span<const double> samples, int sample_rate,
                             std::size_t segment_len = 4096, double overlap_frac = 0.5) {
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  if (!is_power_of_two(segment_len))
    throw std::invalid_argument("segment length must be a power of two");
  if (samples.size() < segment_len) throw std::invalid_argument("insufficient samples");
  if (!(overlap_frac >= 0.0 && overlap_frac < 1.0))
    throw std::invalid_argument("overlap fraction outside [0,1)");
  for (double v : samples)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite samples");

  std::vector<double> window(segment_len);
  double win_power = 0.0;
  for (std::size_t t = 0; t < segment_len; ++t) {
    window[t] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) /
                                      static_cast<double>(segment_len)));
    win_power += window[t] * window[t];
  }

  const std::size_t hop =
      std::max<std::size_t>(1, segment_len - static_cast<std::size_t>(std::floor(
                                                 overlap_frac * static_cast<double>(segment_len))));
  const std::size_t n_bins = segment_len / 2 + 1;
  std::vector<double> accum(n_bins, 0.0);
  std::vector<double> frame(segment_len);
  std::vector<double> magsq;
  std::vector<std::complex<double>> scratch;
  std::size_t n_segments = 0;
  for (std::size_t start = 0; start + segment_len <= samples.size(); start += hop) {
    for (std::size_t t = 0; t < segment_len; ++t) frame[t] = samples[start + t] * window[t];
    rfft_magsq(frame, magsq, scratch);
    for (std::size_t k = 0; k < n_bins; ++k) accum[k] += magsq[k];
    ++n_segments;
  }

  PsdEstimate out;
  out.frequencies.resize(n_bins);
  out.psd.resize(n_bins);
  const double df = static_cast<double>(sample_rate) / static_cast<double>(segment_len);
  const double scale = 1.0 / (static_cast<double>(sample_rate) * win_power *
                              static_cast<double>(n_segments));
  for (std::size_t k = 0; k < n_bins; ++k) {
    out.frequencies[k] = df * static_cast<double>(k);
    double v = accum[k] * scale;
    if (k != 0 && k != segment_len / 2) v *= 2.0;  // one-sided
    out.psd[k] = v;
  }
  return out;
}

inline PsdEstimate welch_psd(const AudioClip& clip, int channel, std::size_t segment_len = 4096,
                             double overlap_frac = 0.5) {
  if (channel < 0 || channel >= clip.n_channels())
    throw std::invalid_argument("channel index out of range");
  return welch_psd(std::span<const double>(clip.channels[static_cast<std::size_t>(channel)]),
                   clip.sample_rate, segment_len, overlap_frac);
}

}  // namespace sonomap
