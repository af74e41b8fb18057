#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "saii/error.hpp"
#include "saii/sampler.hpp"

using namespace saii;
using namespace saii::sampling;

namespace {

const data::Normalization kNorm{2500.0, 10500.0, 0.3};

codec::Codec tiny_codec() {
  codec::CodecConfig c;
  c.base_width = 8;
  c.codebook_size = 16;
  return codec::Codec(c, kNorm);
}

diff::DiffusionConfig tiny_diffusion() {
  diff::DiffusionConfig c;
  c.net.base_width = 8;
  c.net.mults = {1, 2};
  c.T = 100;
  return c;
}

struct Scene {
  ImpedanceGrid truth;
  ImpedanceGrid lowfreq;
  seis::Wavelet wavelet;
  SeismicSection d;
};

Scene scene() {
  Scene s{data::random_layered_model(32, 32, {}, 4), {}, seis::ricker(30.0, 0.002), {}};
  s.lowfreq = data::lowpass_impedance(s.truth, 6.0, 0.002);
  s.d = seis::synthesize(s.truth.values, s.wavelet);
  return s;
}

SamplerConfig small_sampler() {
  SamplerConfig c;
  c.num_steps = 6;
  c.interval = 2;
  c.inner_iters = 5;
  c.seed = 3;
  return c;
}

// Independent alpha_bar from the linear beta ramp.
double abar(int t, int T = 1000) {
  double a = 1.0;
  for (int k = 1; k <= t; ++k) a *= 1.0 - (1e-4 + (2e-2 - 1e-4) * (k - 1) / (T - 1.0));
  return a;
}

}  // namespace

TEST(Timesteps, EndpointsAndOrder) {
  const auto ts = ddim_timesteps(30, 1000);
  ASSERT_EQ(ts.size(), 30u);
  EXPECT_EQ(ts.front(), 1000);
  EXPECT_EQ(ts.back(), 1);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_EQ(ddim_timesteps(1, 1000), std::vector<int>{1000});
  EXPECT_EQ(ddim_timesteps(1000, 1000).size(), 1000u);
  EXPECT_THROW(ddim_timesteps(0, 1000), ParameterError);
  EXPECT_THROW(ddim_timesteps(1001, 1000), ParameterError);
}

TEST(Ddim, SigmaMatchesFormula) {
  const auto s = diff::make_linear_schedule();
  for (auto [t, tn] : {std::pair{0, 34}, {100, 134}, {500, 900}, {966, 1000}})
    for (double eta : {0.0, 0.5, 1.0}) {
      const double a = abar(t), b = abar(tn);
      EXPECT_NEAR(ddim_sigma(s, t, tn, eta), eta * std::sqrt((1 - a) / (1 - b)) * std::sqrt(1 - b / a), 1e-12);
    }
  EXPECT_THROW(ddim_sigma(s, 5, 5, 0.0), ParameterError);
}

TEST(Ddim, DeterministicStepWithTrueNoiseStaysOnTrajectory) {
  const auto s = diff::make_linear_schedule();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  LatentTensor z0(3, 4, 4), eps(3, 4, 4);
  for (auto* t : {&z0, &eps})
    for (double& v : t->values) v = g(rng);
  const auto z_next = diff::q_sample(z0, 700, eps, s);
  const auto z = ddim_step(z_next, eps, 700, 300, s, 0.0, rng);
  const auto ref = diff::q_sample(z0, 300, eps, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z.values[i], ref.values[i], 1e-10);
  const auto z0_hat = predict_z0(z_next, eps, 700, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z0_hat.values[i], z0.values[i], 1e-10);
  const auto last = ddim_step(diff::q_sample(z0, 30, eps, s), eps, 30, 0, s, 0.0, rng);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(last.values[i], z0.values[i], 1e-10);
}

TEST(Resample, KappaMatchesFormula) {
  const auto s = diff::make_linear_schedule();
  for (int t : {1, 40, 500, 1000}) {
    const double a = abar(t), p = abar(t - 1);
    EXPECT_NEAR(kappa_sq(s, t, 40.0), 40.0 * (1 - p) / a * (1 - a / p), 1e-12 * (1 + 40.0 * (1 - p) / a));
  }
  EXPECT_THROW(kappa_sq(s, 0, 40.0), ParameterError);
}

TEST(Resample, SampleMomentsMatch) {
  const auto s = diff::make_linear_schedule();
  const int n = 100000;
  LatentTensor z0p(1, 1, n, 1.3), zt(1, 1, n, -0.7);
  std::mt19937_64 rng(8);
  for (int t : {10, 400, 900}) {
    const auto m = resample_moments(s, t, 40.0);
    const auto out = stochastic_resample(z0p, zt, t, 40.0, s, rng);
    double mean = 0.0, var = 0.0;
    for (double v : out.values) mean += v;
    mean /= n;
    for (double v : out.values) var += (v - mean) * (v - mean);
    var /= n - 1;
    const double mu = m.weight_z0 * 1.3 + m.weight_zt * -0.7;
    EXPECT_NEAR(mean, mu, 4.0 * std::sqrt(m.variance / n)) << t;
    EXPECT_NEAR(var, m.variance, 4.0 * m.variance * std::sqrt(2.0 / n)) << t;
    // Closed-form Gaussian product with kappa^2.
    const double k2 = kappa_sq(s, t, 40.0), a = abar(t);
    EXPECT_NEAR(m.weight_z0, k2 * std::sqrt(a) / (k2 + 1 - a), 1e-12);
    EXPECT_NEAR(m.weight_zt, (1 - a) / (k2 + 1 - a), 1e-12);
    EXPECT_NEAR(m.variance, k2 * (1 - a) / (k2 + 1 - a), 1e-12);
  }
  EXPECT_EQ(stochastic_resample(z0p, zt, 0, 40.0, s, rng), z0p);
}

TEST(Resample, GammaLimits) {
  const auto s = diff::make_linear_schedule();
  for (int t : {50, 500, 950}) {
    const double a = s.alpha_bar_at(t);
    const auto lo = resample_moments(s, t, 1e-12);
    EXPECT_NEAR(lo.weight_zt, 1.0, 1e-6);
    EXPECT_NEAR(lo.weight_z0, 0.0, 1e-6);
    EXPECT_NEAR(lo.variance, 0.0, 1e-6);
    const auto hi = resample_moments(s, t, 1e12);
    EXPECT_NEAR(hi.weight_z0, std::sqrt(a), 1e-6);
    EXPECT_NEAR(hi.weight_zt, 0.0, 1e-6);
    EXPECT_NEAR(hi.variance, 1 - a, 1e-6);
  }
}

TEST(Consistency, NeverIncreasesMisfit) {
  const auto sc = scene();
  const auto c = tiny_codec();
  auto cfg = small_sampler();
  cfg.inner_iters = 30;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  LatentTensor z = c.encode(kNorm.normalize_impedance(sc.lowfreq.values));
  for (double& v : z.values) v = v * c.latent_scale() + 0.1 * g(rng);
  const auto r = data_consistency_opt(z, sc.d, sc.wavelet, c, cfg);
  EXPECT_FALSE(r.warning);
  EXPECT_GT(r.iterations, 0);
  EXPECT_LT(r.misfit_final, r.misfit_initial);
  EXPECT_TRUE(r.z0.same_shape(z));
  cfg.inner_iters = 0;
  const auto none = data_consistency_opt(z, sc.d, sc.wavelet, c, cfg);
  EXPECT_EQ(none.misfit_final, none.misfit_initial);
}

TEST(Invert, DeterministicGatedAndRecorded) {
  const auto sc = scene();
  const auto c = tiny_codec();
  const diff::DiffusionModel m(tiny_diffusion(), c.hash());
  const auto cfg = small_sampler();
  const auto a = invert(sc.d, sc.lowfreq, sc.wavelet, m, c, cfg);
  const auto b = invert(sc.d, sc.lowfreq, sc.wavelet, m, c, cfg);
  EXPECT_EQ(a.impedance.values, b.impedance.values);
  EXPECT_EQ(a.impedance.values.rows(), 32u);
  EXPECT_EQ(a.impedance.values.cols(), 32u);
  EXPECT_GT(a.impedance.values.min(), 0.0);
  ASSERT_EQ(a.steps.size(), 6u);
  for (const auto& st : a.steps) {
    EXPECT_EQ(st.resampled, st.step % 2 == 0) << st.step;
    EXPECT_GE(st.residual, 0.0);
  }
  EXPECT_EQ(a.steps.back().t_to, 0);
  EXPECT_EQ(a.sidecar().at("codec_hash"), c.hash());

  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(invert(sc.d, sc.lowfreq, sc.wavelet, m, c, other).impedance.values, a.impedance.values);
  auto off = cfg;
  off.interval = off.num_steps + 1;
  for (const auto& st : invert(sc.d, sc.lowfreq, sc.wavelet, m, c, off).steps) EXPECT_FALSE(st.resampled);
}

TEST(Invert, CodecMismatchThrows) {
  const auto sc = scene();
  const auto c = tiny_codec();
  const diff::DiffusionModel m(tiny_diffusion(), "elsewhere");
  EXPECT_THROW(invert(sc.d, sc.lowfreq, sc.wavelet, m, c, small_sampler()), CheckpointMismatch);
}

TEST(Config, Validation) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate(1000));
  EXPECT_EQ(SamplerConfig::from_json(c.to_json()).to_json(), c.to_json());
  c.num_steps = 2000;
  EXPECT_THROW(c.validate(1000), ValidationError);
  c = {};
  c.eta = 1.5;
  EXPECT_THROW(c.validate(1000), ValidationError);
  c = {};
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(1000), ValidationError);
  c = {};
  c.interval = 0;
  EXPECT_THROW(c.validate(1000), ValidationError);
}
