#include "saii/seisforward.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "saii/error.hpp"
#include "saii/fft.hpp"

namespace saii::seis {

using std::numbers::pi;

nlohmann::json Wavelet::to_json() const {
  return {{"type", "ricker"},
          {"f", dominant_freq_hz},
          {"dt", dt},
          {"phase_deg", phase_deg},
          {"half_length", half_length()}};
}

Wavelet Wavelet::from_json(const nlohmann::json& j) {
  if (j.value("type", std::string("ricker")) != "ricker") throw ValidationError("unsupported wavelet type");
  return ricker(j.at("f").get<double>(), j.at("dt").get<double>(), j.value("half_length", 0),
                j.value("phase_deg", 0.0));
}

int default_half_length(double dominant_freq_hz, double dt) {
  return static_cast<int>(std::ceil(2.0 / (dominant_freq_hz * dt)));
}

Wavelet ricker(double dominant_freq_hz, double dt, int half_length, double phase_deg) {
  if (!(dt > 0.0)) throw ParameterError("ricker: dt must be > 0");
  const double nyquist = 0.5 / dt;
  if (!(dominant_freq_hz > 0.0) || dominant_freq_hz >= nyquist) {
    throw ParameterError("ricker: dominant frequency must lie in (0, Nyquist)");
  }
  if (half_length <= 0) half_length = default_half_length(dominant_freq_hz, dt);
  if (half_length < 2) throw ParameterError("ricker: half_length must be >= 2");

  const std::size_t n = 2 * static_cast<std::size_t>(half_length) + 1;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) - half_length) * dt;
    const double a = pi * pi * dominant_freq_hz * dominant_freq_hz * t * t;
    w[i] = (1.0 - 2.0 * a) * std::exp(-a);
  }

  if (phase_deg != 0.0) {
    // Rotate on a zero-padded copy so the circular Hilbert transform does not wrap.
    const std::size_t pad = 3 * n;
    std::vector<double> padded(n + 2 * pad, 0.0);
    std::copy(w.begin(), w.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));
    const auto analytic = fft::analytic_signal(padded);
    const double phi = phase_deg * pi / 180.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = analytic[pad + i];
      w[i] = std::cos(phi) * a.real() - std::sin(phi) * a.imag();
    }
  }

  double peak = 0.0;
  for (double v : w) peak = std::max(peak, std::abs(v));
  for (double& v : w) v /= peak;

  return Wavelet{std::move(w), dt, dominant_freq_hz, phase_deg};
}

std::vector<double> reflectivity(std::span<const double> z) {
  std::vector<double> r(z.size(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (!(z[j] > 0.0) || !std::isfinite(z[j])) throw DomainError("reflectivity: impedance must be positive");
  }
  for (std::size_t j = 0; j + 1 < z.size(); ++j) r[j] = (z[j + 1] - z[j]) / (z[j + 1] + z[j]);
  return r;
}

Array2D reflectivity(const Array2D& impedance) {
  Array2D r(impedance.rows(), impedance.cols());
  for (std::size_t c = 0; c < impedance.cols(); ++c) r.set_column(c, reflectivity(impedance.column(c)));
  return r;
}

ConvOperator::ConvOperator(Wavelet wavelet, std::size_t output_len)
    : wavelet_(std::move(wavelet)), n_(output_len) {
  if (wavelet_.samples.size() % 2 == 0) throw ParameterError("ConvOperator: wavelet length must be odd");
}

// out[i] = sum_k w[k] r[i - (k - h)]
void ConvOperator::apply(std::span<const double> r, std::span<double> out) const {
  const auto& w = wavelet_.samples;
  const long h = wavelet_.half_length();
  const long n = static_cast<long>(n_);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    const long jlo = std::max(0L, i - h), jhi = std::min(n - 1, i + h);
    for (long j = jlo; j <= jhi; ++j) acc += w[static_cast<std::size_t>(i - j + h)] * r[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
}

void ConvOperator::apply_adjoint(std::span<const double> y, std::span<double> out) const {
  const auto& w = wavelet_.samples;
  const long h = wavelet_.half_length();
  const long n = static_cast<long>(n_);
  for (long j = 0; j < n; ++j) {
    double acc = 0.0;
    const long ilo = std::max(0L, j - h), ihi = std::min(n - 1, j + h);
    for (long i = ilo; i <= ihi; ++i) acc += w[static_cast<std::size_t>(i - j + h)] * y[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(j)] = acc;
  }
}

std::vector<double> ConvOperator::dense() const {
  std::vector<double> m(n_ * n_, 0.0);
  const long h = wavelet_.half_length();
  for (long i = 0; i < static_cast<long>(n_); ++i)
    for (long j = 0; j < static_cast<long>(n_); ++j) {
      const long k = i - j + h;
      if (k >= 0 && k < static_cast<long>(wavelet_.samples.size()))
        m[static_cast<std::size_t>(i) * n_ + static_cast<std::size_t>(j)] = wavelet_.samples[static_cast<std::size_t>(k)];
    }
  return m;
}

namespace {

template <bool Adjoint>
Array2D columnwise(const Array2D& in, const Wavelet& w) {
  const ConvOperator op(w, in.rows());
  Array2D out(in.rows(), in.cols());
  std::vector<double> col(in.rows()), res(in.rows());
  for (std::size_t c = 0; c < in.cols(); ++c) {
    for (std::size_t r = 0; r < in.rows(); ++r) col[r] = in(r, c);
    if constexpr (Adjoint) {
      op.apply_adjoint(col, res);
    } else {
      op.apply(col, res);
    }
    out.set_column(c, res);
  }
  return out;
}

}  // namespace

Array2D convolve(const Array2D& traces, const Wavelet& w) { return columnwise<false>(traces, w); }
Array2D correlate(const Array2D& traces, const Wavelet& w) { return columnwise<true>(traces, w); }

SeismicSection synthesize(const Array2D& impedance, const Wavelet& w) {
  return convolve(reflectivity(impedance), w);
}

Array2D adjoint(const SeismicSection& section, const Wavelet& w) { return correlate(section, w); }

std::pair<double, double> default_noise_band(double f, double dt) {
  // Ricker amplitude spectrum, normalized to 1 at f: u exp(1 - u), u = (nu/f)^2.
  auto rel = [f](double nu) {
    const double u = (nu / f) * (nu / f);
    return u * std::exp(1.0 - u);
  };
  const double target = 0.1;  // -20 dB in amplitude
  auto solve = [&](double lo, double hi, bool rising) {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const bool below = rel(mid) < target;
      if (below == rising) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double low = solve(0.0, f, true);
  double high = solve(f, 20.0 * f, false);
  const double nyquist = 0.5 / dt;
  high = std::min(high, 0.999 * nyquist);
  return {low, high};
}

Array2D bandpass_noise(std::size_t rows, std::size_t cols, const NoiseSpec& spec, double dt) {
  const double nyquist = 0.5 / dt;
  if (!(spec.band_low_hz >= 0.0 && spec.band_low_hz < spec.band_high_hz && spec.band_high_hz < nyquist)) {
    throw ParameterError("noise band must satisfy 0 <= low < high < Nyquist");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Array2D noise(rows, cols);
  std::vector<double> trace(rows);
  std::size_t kept_bins = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    for (double& v : trace) v = normal(rng);
    auto spec_c = fft::rfft(trace);
    kept_bins = 0;
    for (std::size_t k = 0; k < spec_c.size(); ++k) {
      const double f = fft::bin_frequency(k, rows, dt);
      if (f < spec.band_low_hz || f > spec.band_high_hz) {
        spec_c[k] = 0.0;
      } else {
        ++kept_bins;
      }
    }
    noise.set_column(c, fft::irfft(spec_c, rows));
  }
  if (kept_bins == 0) throw ParameterError("noise band contains no frequency bins for this trace length");
  return noise;
}

SeismicSection add_bandpass_noise(const SeismicSection& d, const NoiseSpec& spec, double dt) {
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) return d;
  const double signal = d.sum_squares();
  if (!(signal > 0.0)) throw DomainError("add_bandpass_noise: zero-energy signal with finite SNR");
  Array2D noise = bandpass_noise(d.rows(), d.cols(), spec, dt);
  const double power = noise.sum_squares();
  const double scale = std::sqrt(signal / (power * std::pow(10.0, spec.snr_db / 10.0)));
  SeismicSection out = d;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += scale * noise.data()[i];
  return out;
}

MisfitResult misfit_and_gradient(const Array2D& impedance, const SeismicSection& d, const Wavelet& w) {
  require_same_shape(impedance, d, "misfit_and_gradient");
  const std::size_t m = impedance.rows();
  const Array2D r = reflectivity(impedance);
  Array2D residual = convolve(r, w);  // f(z), turned into f(z) - d below
  double value = 0.0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    residual.data()[i] -= d.data()[i];
    value += residual.data()[i] * residual.data()[i];
  }
  // dJ/dr = 2 W^T (f(z) - d); then chain through r_j(z_j, z_{j+1}).
  const Array2D gr = correlate(residual, w);
  MisfitResult out{value, Array2D(m, impedance.cols(), 0.0)};
  for (std::size_t c = 0; c < impedance.cols(); ++c) {
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double z0 = impedance(j, c), z1 = impedance(j + 1, c);
      const double s = (z0 + z1) * (z0 + z1);
      const double g = 2.0 * gr(j, c);
      out.gradient(j, c) += g * (-2.0 * z1 / s);
      out.gradient(j + 1, c) += g * (2.0 * z0 / s);
    }
  }
  return out;
}

double misfit(const Array2D& impedance, const SeismicSection& d, const Wavelet& w) {
  require_same_shape(impedance, d, "misfit");
  const Array2D f = synthesize(impedance, w);
  double value = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double e = d.data()[i] - f.data()[i];
    value += e * e;
  }
  return value;
}

}  // namespace saii::seis
