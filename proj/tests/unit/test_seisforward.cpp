#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "saii/error.hpp"
#include "saii/seisforward.hpp"

using namespace saii;
using namespace saii::seis;

namespace {

Array2D random_impedance(std::size_t m, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(2500.0, 9000.0);
  Array2D z(m, n);
  for (double& v : z.values()) v = u(rng);
  return z;
}

// Full linear convolution cropped to the centered same-length window.
std::vector<double> conv_same_oracle(const std::vector<double>& r, const std::vector<double>& w) {
  const std::size_t n = r.size(), k = w.size();
  std::vector<double> full(n + k - 1, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) full[i + j] += r[i] * w[j];
  return {full.begin() + static_cast<long>(k / 2), full.begin() + static_cast<long>(k / 2 + n)};
}

double dft_magnitude(const std::vector<double>& x, double freq_index) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * freq_index * static_cast<double>(i) / x.size());
  return std::abs(acc);
}

}  // namespace

TEST(Reflectivity, TwoLayerExact) {
  const std::vector<double> z{2000.0, 3000.0};
  const auto r = reflectivity(z);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0], 0.2);
  EXPECT_EQ(r[1], 0.0);
}

TEST(Reflectivity, ConstantTraceIsZero) {
  const std::vector<double> z(7, 4200.0);
  for (double v : reflectivity(z)) EXPECT_EQ(v, 0.0);
}

TEST(Reflectivity, RejectsNonPositive) {
  const std::vector<double> z{2000.0, 0.0, 3000.0};
  EXPECT_THROW(reflectivity(z), DomainError);
  const std::vector<double> nan{2000.0, std::nan("")};
  EXPECT_THROW(reflectivity(nan), DomainError);
}

TEST(Ricker, MatchesClosedFormAndIsSymmetric) {
  const double f = 30.0, dt = 0.002;
  const Wavelet w = ricker(f, dt);
  EXPECT_EQ(w.half_length(), default_half_length(f, dt));
  EXPECT_EQ(w.samples.size() % 2, 1u);
  const int h = w.half_length();
  EXPECT_DOUBLE_EQ(w.samples[static_cast<std::size_t>(h)], 1.0);
  for (int i = -h; i <= h; ++i) {
    const double t = i * dt, a = std::pow(std::numbers::pi * f * t, 2);
    EXPECT_NEAR(w.samples[static_cast<std::size_t>(i + h)], (1 - 2 * a) * std::exp(-a), 1e-15);
    EXPECT_EQ(w.samples[static_cast<std::size_t>(h + i)], w.samples[static_cast<std::size_t>(h - i)]);
  }
}

TEST(Ricker, PhaseRotation) {
  const Wavelet w0 = ricker(25.0, 0.002, 0, 0.0);
  const Wavelet w180 = ricker(25.0, 0.002, 0, 180.0);
  for (std::size_t i = 0; i < w0.samples.size(); ++i) EXPECT_NEAR(w180.samples[i], -w0.samples[i], 1e-6);
  // 90 degrees turns the even pulse odd.
  const Wavelet w90 = ricker(25.0, 0.002, 0, 90.0);
  const std::size_t n = w90.samples.size(), h = n / 2;
  EXPECT_NEAR(w90.samples[h], 0.0, 1e-3);
  for (std::size_t i = 1; i <= h; ++i) EXPECT_NEAR(w90.samples[h + i], -w90.samples[h - i], 1e-3);
}

TEST(Ricker, RejectsBadParameters) {
  EXPECT_THROW(ricker(0.0, 0.002), ParameterError);
  EXPECT_THROW(ricker(300.0, 0.002), ParameterError);
  EXPECT_THROW(ricker(30.0, -1.0), ParameterError);
}

TEST(Ricker, JsonRoundTrip) {
  const Wavelet w = ricker(33.0, 0.002, 0, 20.0);
  EXPECT_EQ(Wavelet::from_json(w.to_json()), w);
}

TEST(Convolve, MatchesFullConvolutionCrop) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const Wavelet w = ricker(30.0, 0.002);
  Array2D r(50, 3);
  for (double& v : r.values()) v = g(rng);
  const Array2D out = convolve(r, w);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto ref = conv_same_oracle(r.column(c), w.samples);
    for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(out(i, c), ref[i], 1e-12);
  }
}

TEST(Convolve, DenseMatrixAgrees) {
  const Wavelet w = ricker(35.0, 0.002);
  const ConvOperator op(w, 20);
  const auto m = op.dense();
  std::vector<double> r(20), y(20);
  for (std::size_t i = 0; i < 20; ++i) r[i] = std::sin(0.37 * i);
  op.apply(r, y);
  for (std::size_t i = 0; i < 20; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 20; ++j) acc += m[i * 20 + j] * r[j];
    EXPECT_NEAR(y[i], acc, 1e-13);
  }
}

TEST(Convolve, AdjointDotTest) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (double f : {20.0, 30.0, 40.0}) {
    const Wavelet w = ricker(f, 0.002, 0, 15.0);
    Array2D x(64, 8), y(64, 8);
    for (double& v : x.values()) v = g(rng);
    for (double& v : y.values()) v = g(rng);
    const Array2D wx = convolve(x, w), wty = correlate(y, w);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += wx.data()[i] * y.data()[i];
      rhs += x.data()[i] * wty.data()[i];
    }
    EXPECT_LE(std::abs(lhs - rhs) / std::abs(lhs), 1e-10);
  }
}

TEST(Synthesize, IsWaveletTimesReflectivity) {
  std::mt19937_64 rng(5);
  const Array2D z = random_impedance(40, 4, rng);
  const Wavelet w = ricker(30.0, 0.002);
  const Array2D d = synthesize(z, w);
  for (std::size_t c = 0; c < 4; ++c) {
    const auto ref = conv_same_oracle(reflectivity(z.column(c)), w.samples);
    for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(d(i, c), ref[i], 1e-14);
  }
}

TEST(Misfit, GradientMatchesCentralDifferences) {
  // Directional derivative along random directions, scaled to the local impedance.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int inst = 0; inst < 20; ++inst) {
    const Wavelet w = ricker(25.0 + inst % 3 * 5.0, 0.002);
    const Array2D z = random_impedance(32, 4, rng);
    Array2D d(32, 4);
    for (double& v : d.values()) v = 0.05 * g(rng);
    const auto mg = misfit_and_gradient(z, d, w);
    EXPECT_NEAR(mg.value, misfit(z, d, w), 1e-12 * (1.0 + mg.value));
    for (int probe = 0; probe < 3; ++probe) {
      Array2D v(32, 4);
      for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = g(rng) * z.data()[i];
      const double h = 1e-4;
      Array2D zp = z, zm = z;
      double an = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        zp.data()[i] += h * v.data()[i];
        zm.data()[i] -= h * v.data()[i];
        an += mg.gradient.data()[i] * v.data()[i];
      }
      const double fd = (misfit(zp, d, w) - misfit(zm, d, w)) / (2 * h);
      EXPECT_LE(std::abs(fd - an), 1e-5 * std::abs(an)) << "inst " << inst;
    }
  }
}

TEST(Misfit, ZeroAtTruth) {
  std::mt19937_64 rng(2);
  const Array2D z = random_impedance(30, 3, rng);
  const Wavelet w = ricker(30.0, 0.002);
  const auto mg = misfit_and_gradient(z, synthesize(z, w), w);
  EXPECT_EQ(mg.value, 0.0);
  for (double v : mg.gradient.values()) EXPECT_EQ(v, 0.0);
}

TEST(Misfit, ShapeMismatchThrows) {
  EXPECT_THROW(misfit(Array2D(10, 2, 3000.0), Array2D(10, 3), ricker(30.0, 0.002)), DimensionError);
}

TEST(Noise, DefaultBandIsMinus20dB) {
  const double f = 30.0;
  const auto [lo, hi] = default_noise_band(f, 0.002);
  auto rel = [f](double nu) { return (nu / f) * (nu / f) * std::exp(1.0 - (nu / f) * (nu / f)); };
  EXPECT_NEAR(rel(lo), 0.1, 1e-9);
  EXPECT_NEAR(rel(hi), 0.1, 1e-9);
  EXPECT_LT(lo, f);
  EXPECT_GT(hi, f);
}

TEST(Noise, HitsTargetSnr) {
  std::mt19937_64 rng(8);
  const Wavelet w = ricker(30.0, 0.002);
  const Array2D d = synthesize(random_impedance(128, 6, rng), w);
  const auto [lo, hi] = default_noise_band(30.0, 0.002);
  for (double snr : {5.0, 15.0, 30.0}) {
    const Array2D dn = add_bandpass_noise(d, {snr, lo, hi, 42}, 0.002);
    double s = 0.0, n = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      s += d.data()[i] * d.data()[i];
      n += std::pow(dn.data()[i] - d.data()[i], 2);
    }
    EXPECT_NEAR(10.0 * std::log10(s / n), snr, 1e-9);
  }
}

TEST(Noise, IsBandLimited) {
  const std::size_t m = 128;
  const double dt = 0.002;
  const Array2D noise = bandpass_noise(m, 2, {10.0, 20.0, 60.0, 9}, dt);
  const auto col = noise.column(0);
  double in_band = 0.0, out_band = 0.0;
  for (std::size_t k = 0; k <= m / 2; ++k) {
    const double freq = k / (m * dt);
    const double mag = dft_magnitude(col, static_cast<double>(k));
    (freq >= 20.0 && freq <= 60.0 ? in_band : out_band) += mag;
  }
  EXPECT_GT(in_band, 1.0);
  EXPECT_LT(out_band, 1e-9 * in_band);
}

TEST(Noise, SeededAndNoiseFreeIdentity) {
  std::mt19937_64 rng(4);
  const Array2D d = synthesize(random_impedance(64, 3, rng), ricker(30.0, 0.002));
  EXPECT_EQ(add_bandpass_noise(d, {kNoiseFree, 5.0, 80.0, 1}, 0.002), d);
  EXPECT_EQ(add_bandpass_noise(d, {15.0, 5.0, 80.0, 1}, 0.002), add_bandpass_noise(d, {15.0, 5.0, 80.0, 1}, 0.002));
  EXPECT_NE(add_bandpass_noise(d, {15.0, 5.0, 80.0, 1}, 0.002), add_bandpass_noise(d, {15.0, 5.0, 80.0, 2}, 0.002));
  EXPECT_THROW(add_bandpass_noise(d, {15.0, 80.0, 5.0, 1}, 0.002), ParameterError);
  EXPECT_THROW(add_bandpass_noise(Array2D(64, 3), {15.0, 5.0, 80.0, 1}, 0.002), DomainError);
}
