#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "saii/array2d.hpp"

namespace saii::seis {

/// Sampled source pulse. Odd length, centered on sample `half_length()`,
/// peak-normalized so max |samples| == 1.
struct Wavelet {
  std::vector<double> samples;
  double dt = 0.002;
  double dominant_freq_hz = 30.0;
  double phase_deg = 0.0;

  int half_length() const { return static_cast<int>(samples.size() / 2); }

  /// {"type":"ricker", "f", "dt", "phase_deg", "half_length"}
  nlohmann::json to_json() const;
  static Wavelet from_json(const nlohmann::json& j);
  bool operator==(const Wavelet&) const = default;
};

/// Two periods of the dominant frequency, rounded up.
int default_half_length(double dominant_freq_hz, double dt);

/// Ricker pulse (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2) on an odd grid of
/// 2*half_length+1 samples, rotated by a constant phase through the analytic
/// signal when phase_deg != 0. half_length <= 0 selects default_half_length.
Wavelet ricker(double dominant_freq_hz, double dt, int half_length = 0, double phase_deg = 0.0);

/// r_j = (z_{j+1} - z_j) / (z_{j+1} + z_j) for j < m-1, r_{m-1} = 0.
std::vector<double> reflectivity(std::span<const double> impedance_trace);

/// Column-wise reflectivity of a depth x trace impedance grid.
Array2D reflectivity(const Array2D& impedance);

/// Same-length zero-padded convolution of each column with the wavelet (the W r map).
Array2D convolve(const Array2D& traces, const Wavelet& w);

/// Exact adjoint of `convolve` under the Euclidean inner product (correlation).
Array2D correlate(const Array2D& traces, const Wavelet& w);

/// Toeplitz operator for one trace length; applies W and W^T to single traces.
class ConvOperator {
 public:
  ConvOperator(Wavelet wavelet, std::size_t output_len);

  void apply(std::span<const double> r, std::span<double> out) const;
  void apply_adjoint(std::span<const double> y, std::span<double> out) const;
  /// Dense m x m matrix, row-major. Intended for tests and small problems.
  std::vector<double> dense() const;

  const Wavelet& wavelet() const { return wavelet_; }
  std::size_t output_len() const { return n_; }

 private:
  Wavelet wavelet_;
  std::size_t n_;
};

/// f(z) = W C(z), trace by trace.
SeismicSection synthesize(const Array2D& impedance, const Wavelet& w);

/// W^T applied to every trace of a seismic section.
Array2D adjoint(const SeismicSection& section, const Wavelet& w);

inline constexpr double kNoiseFree = std::numeric_limits<double>::infinity();

struct NoiseSpec {
  double snr_db = 20.0;  ///< kNoiseFree leaves the section untouched
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
  std::uint64_t seed = 0;
};

/// Frequencies where the Ricker amplitude spectrum is 20 dB below its peak,
/// clipped to (0, Nyquist).
std::pair<double, double> default_noise_band(double dominant_freq_hz, double dt);

/// Adds Gaussian noise band-limited to [band_low, band_high] per trace, scaled
/// so 10 log10(|d|^2 / |n|^2) == snr_db.
SeismicSection add_bandpass_noise(const SeismicSection& d, const NoiseSpec& spec, double dt);

/// The noise field `add_bandpass_noise` would add (before SNR scaling is
/// applied it is unit-variance per sample; after, it matches the target SNR).
Array2D bandpass_noise(std::size_t rows, std::size_t cols, const NoiseSpec& spec, double dt);

struct MisfitResult {
  double value = 0.0;
  Array2D gradient;
};

/// J(z) = |d - f(z)|^2 and dJ/dz via W^T and the analytic reflectivity Jacobian.
MisfitResult misfit_and_gradient(const Array2D& impedance, const SeismicSection& d, const Wavelet& w);

/// Only the misfit value.
double misfit(const Array2D& impedance, const SeismicSection& d, const Wavelet& w);

}  // namespace saii::seis
