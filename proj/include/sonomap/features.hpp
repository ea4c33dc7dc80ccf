#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sonomap/beta.hpp"
#include "sonomap/csv.hpp"
#include "sonomap/welch.hpp"

namespace sonomap {

enum class TimeOfDay { morning = 0, afternoon = 1, evening = 2 };

inline const char* to_string(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::morning: return "morning";
    case TimeOfDay::afternoon: return "afternoon";
    default: return "evening";
  }
}

inline TimeOfDay tod_from_string(const std::string& s) {
  if (s == "morning") return TimeOfDay::morning;
  if (s == "afternoon") return TimeOfDay::afternoon;
  if (s == "evening") return TimeOfDay::evening;
  throw std::runtime_error("unknown time of day: " + s);
}

/// Seven 1.5 kHz bands spanning 0.5-11 kHz. Band 0 (0.5-2 kHz) carries
/// anthropogenic noise; bands 1-6 (2-11 kHz) carry biological sound.
struct BandSpectrum {
  static constexpr int kBands = 7;
  static constexpr double kLowHz = 500.0;
  static constexpr double kHighHz = 11000.0;
  static constexpr double kWidthHz = 1500.0;

  std::array<double, kBands> values{};

  static double band_low(int b) { return kLowHz + kWidthHz * b; }
  static double band_high(int b) { return band_low(b) + kWidthHz; }
};

enum class BandNormalization { max_bin, l2 };

/// Normalized per-band mean of PSD bins inside [0.5, 11] kHz.
/// Default normalization divides by the maximum bin so values land in [0,1].
inline BandSpectrum band_features(const std::vector<double>& frequencies,
                                  const std::vector<double>& psd,
                                  BandNormalization norm = BandNormalization::max_bin) {
  if (frequencies.size() != psd.size() || frequencies.size() < 2)
    throw std::invalid_argument("frequency/psd size mismatch");
  if (frequencies.back() < BandSpectrum::kHighHz)
    throw std::invalid_argument("frequency grid does not cover 11 kHz");
  const double spacing = frequencies[1] - frequencies[0];
  if (spacing > BandSpectrum::kWidthHz)
    throw std::invalid_argument("resolution too coarse for bands");

  double max_bin = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    const double f = frequencies[i];
    if (f < BandSpectrum::kLowHz || f > BandSpectrum::kHighHz) continue;
    max_bin = std::max(max_bin, psd[i]);
    sumsq += psd[i] * psd[i];
  }
  const double denom = norm == BandNormalization::max_bin ? max_bin : std::sqrt(sumsq);

  BandSpectrum out;
  for (int b = 0; b < BandSpectrum::kBands; ++b) {
    const double lo = BandSpectrum::band_low(b);
    const double hi = BandSpectrum::band_high(b);
    double acc = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < frequencies.size(); ++i) {
      const double f = frequencies[i];
      const bool inside = b + 1 == BandSpectrum::kBands ? (f >= lo && f <= hi) : (f >= lo && f < hi);
      if (!inside) continue;
      acc += denom > 0.0 ? psd[i] / denom : 0.0;
      ++count;
    }
    out.values[static_cast<std::size_t>(b)] = count > 0 ? acc / count : 0.0;
  }
  return out;
}

/// One minute of soundscape.
struct SoundBite {
  int site_id = 0;
  TimeOfDay time_of_day = TimeOfDay::morning;
  int minute = 0;  // 1..29
  double alpha = 0.0;
  double y = 0.0;
};

struct MinuteFeatures {
  BandSpectrum bands;  // channel-averaged
  double alpha_raw = 0.0;
  double y_raw = 0.0;
};

struct ExtractParams {
  std::size_t segment_len = 4096;
  double overlap_frac = 0.5;
  BandNormalization normalization = BandNormalization::max_bin;
  int minutes = 29;
};

/// Per-minute channel-averaged band features, without the boundary squeeze.
inline std::vector<MinuteFeatures> extract_minutes(const AudioClip& clip,
                                                   const ExtractParams& params = {}) {
  const auto needed = static_cast<std::size_t>(params.minutes) * 60u *
                      static_cast<std::size_t>(clip.sample_rate);
  if (clip.samples_per_channel() < needed)
    throw std::invalid_argument("recording shorter than " + std::to_string(params.minutes) +
                                " minutes");
  if (clip.n_channels() == 1) warn("mono recording; using single-channel average");

  const std::size_t per_minute = 60u * static_cast<std::size_t>(clip.sample_rate);
  std::vector<MinuteFeatures> out(static_cast<std::size_t>(params.minutes));
  for (int m = 0; m < params.minutes; ++m) {
    BandSpectrum avg;
    for (int c = 0; c < clip.n_channels(); ++c) {
      const auto& ch = clip.channels[static_cast<std::size_t>(c)];
      const std::span<const double> slice(ch.data() + static_cast<std::size_t>(m) * per_minute,
                                          per_minute);
      const PsdEstimate est =
          welch_psd(slice, clip.sample_rate, params.segment_len, params.overlap_frac);
      const BandSpectrum bands = band_features(est.frequencies, est.psd, params.normalization);
      for (int b = 0; b < BandSpectrum::kBands; ++b)
        avg.values[static_cast<std::size_t>(b)] += bands.values[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < BandSpectrum::kBands; ++b)
      avg.values[static_cast<std::size_t>(b)] /= clip.n_channels();
    auto& mf = out[static_cast<std::size_t>(m)];
    mf.bands = avg;
    mf.alpha_raw = avg.values[0];
    double sum = 0.0;
    for (int b = 1; b < BandSpectrum::kBands; ++b) sum += avg.values[static_cast<std::size_t>(b)];
    mf.y_raw = sum / 6.0;
  }
  return out;
}

/// Full extraction: band features per minute, squeezed into (0,1).
/// squeeze_n = 0 uses the number of bites produced by this call; callers
/// assembling a larger dataset pass its total size instead.
inline std::vector<SoundBite> extract_soundbites(const AudioClip& clip, int site_id,
                                                 TimeOfDay time_of_day,
                                                 const ExtractParams& params = {},
                                                 std::size_t squeeze_n = 0) {
  const auto minutes = extract_minutes(clip, params);
  const std::size_t n = squeeze_n > 0 ? squeeze_n : minutes.size();
  std::vector<SoundBite> out(minutes.size());
  for (std::size_t m = 0; m < minutes.size(); ++m) {
    out[m].site_id = site_id;
    out[m].time_of_day = time_of_day;
    out[m].minute = static_cast<int>(m) + 1;
    out[m].alpha = boundary_squeeze(minutes[m].alpha_raw, n);
    out[m].y = boundary_squeeze(minutes[m].y_raw, n);
  }
  return out;
}

}  // namespace sonomap
