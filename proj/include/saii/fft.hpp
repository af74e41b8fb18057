#pragma once

#include <complex>
#include <span>
#include <vector>

namespace saii::fft {

/// One-sided spectrum (n/2 + 1 bins) of a real sequence.
std::vector<std::complex<double>> rfft(std::span<const double> x);

/// Inverse of rfft for a length-n real sequence, normalized so irfft(rfft(x)) == x.
std::vector<double> irfft(std::span<const std::complex<double>> spectrum, std::size_t n);

/// Analytic signal x + i*H[x] via the one-sided spectrum (circular).
std::vector<std::complex<double>> analytic_signal(std::span<const double> x);

/// Frequency (Hz) of bin k for an n-point transform at sampling interval dt.
inline double bin_frequency(std::size_t k, std::size_t n, double dt) {
  return static_cast<double>(k) / (static_cast<double>(n) * dt);
}

}  // namespace saii::fft
