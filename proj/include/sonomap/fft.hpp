#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sonomap {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT (decimation in time).
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw std::invalid_argument("FFT length must be a power of two");
  // bit reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

/// Forward FFT of a real windowed frame; returns the n/2+1 one-sided bins.
inline void rfft_magsq(const std::vector<double>& frame, std::vector<double>& magsq,
                       std::vector<std::complex<double>>& scratch) {
  const std::size_t n = frame.size();
  scratch.assign(n, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) scratch[i] = {frame[i], 0.0};
  fft_inplace(scratch);
  magsq.resize(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) magsq[k] = std::norm(scratch[k]);
}

}  // namespace sonomap
