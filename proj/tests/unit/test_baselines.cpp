#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "saii/baselines.hpp"
#include "saii/error.hpp"

using namespace saii;
using namespace saii::base;
namespace fs = std::filesystem;

namespace {

ImpedanceGrid blocky_model() {
  Array2D z(64, 16);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      double v = 4000;
      if (i >= 12) v = 5500;
      if (i >= 28 + (j >= 8 ? 3 : 0)) v = 4800;
      if (i >= 44) v = 7000;
      if (i >= 54) v = 6200;
      z(i, j) = v;
    }
  return {z, 0.002, "blocky"};
}

double rre(const Array2D& a, const Array2D& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += std::pow(a.data()[k] - b.data()[k], 2);
    den += b.data()[k] * b.data()[k];
  }
  return std::sqrt(num / den);
}

TvConfig blocky_config() {
  TvConfig c;
  c.mu1 = 0.001;
  c.mu2 = 0.01;
  return c;
}

}  // namespace

TEST(Tv, Tv2dMatchesDirectSum) {
  const Array2D u(3, 3, std::vector<double>{0, 1, 3, 2, 2, 2, 5, 1, 0});
  double ref = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double dy = i + 1 < 3 ? u(i + 1, j) - u(i, j) : 0.0;
      const double dx = j + 1 < 3 ? u(i, j + 1) - u(i, j) : 0.0;
      ref += std::hypot(dy, dx);
    }
  EXPECT_NEAR(tv2d(u), ref, 1e-14);
  EXPECT_EQ(tv2d(Array2D(4, 4, 7.0)), 0.0);
}

TEST(Tv, RecoversNoiselessBlockyModel) {
  const auto truth = blocky_model();
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(truth.values, w);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  const auto r = tv_invert(d, l, w, blocky_config());
  EXPECT_LT(rre(r.impedance.values, truth.values), 0.05);
  EXPECT_LT(rre(r.impedance.values, truth.values), rre(l.values, truth.values));
  ASSERT_GE(r.log.size(), 2u);
  EXPECT_GE(std::log10(r.log.front().gap / r.log.back().gap), 3.0);
  EXPECT_EQ(r.snapshots.size(), r.log.size());
}

TEST(Tv, LogTermsMatchProblemAndSolutionIsMinimal) {
  const auto truth = blocky_model();
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::add_bandpass_noise(seis::synthesize(truth.values, w), {20.0, 10.0, 70.0, 3}, 0.002);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  auto cfg = blocky_config();
  const auto r = tv_invert(d, l, w, cfg);
  const auto& last = r.log.back();
  const auto& snap = r.snapshots.back();
  EXPECT_NEAR(last.data_term, r.problem.data_term(snap), 1e-9 * (1 + last.data_term));
  EXPECT_NEAR(last.prior_term, r.problem.prior_term(snap), 1e-9 * (1 + last.prior_term));
  EXPECT_NEAR(last.tv_term, r.problem.tv_term(snap), 1e-9 * (1 + last.tv_term));
  EXPECT_NEAR(last.objective, last.data_term + last.prior_term + last.tv_term, 1e-9 * (1 + last.objective));
  // Convex objective: random perturbations of the solution do not decrease it.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  const double f0 = r.problem.objective(r.solution);
  for (int k = 0; k < 10; ++k) {
    Array2D u = r.solution;
    for (double& v : u.values()) v += 1e-3 * g(rng);
    EXPECT_GE(r.problem.objective(u), f0 - 1e-6 * f0);
  }
}

TEST(Tv, LinearDomainAlsoConverges) {
  const auto truth = blocky_model();
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(truth.values, w);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  auto cfg = blocky_config();
  cfg.operate_in_log_domain = false;
  const auto r = tv_invert(d, l, w, cfg);
  EXPECT_GE(std::log10(r.log.front().gap / r.log.back().gap), 3.0);
  EXPECT_LT(rre(r.impedance.values, truth.values), rre(l.values, truth.values));
}

TEST(Tv, ConfigValidation) {
  TvConfig c;
  c.tau = 1.0;
  c.sigma = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TvConfig{};
  c.mu2 = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(TvConfig::from_json(blocky_config().to_json()).to_json(), blocky_config().to_json());
}

TEST(Usdl, TermsDecomposeExactly) {
  const data::Normalization norm{2500.0, 10500.0, 0.3};
  const auto truth = data::random_layered_model(32, 16, {}, 3);
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(truth.values, w);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  UsdlConfig cfg;
  cfg.mu1 = 0.7;
  cfg.mu2 = 0.03;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  for (int trial = 0; trial < 5; ++trial) {
    Array2D x(32, 16);
    for (double& v : x.values()) v = u(rng);
    const auto t = usdl_terms(x, d, l, w, norm, cfg);

    const double data = seis::misfit(norm.denormalize_impedance(x), d, w);
    const Array2D xl = norm.normalize_impedance(l.values);
    double prior = 0.0, tv = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) prior += std::pow(x.data()[k] - xl.data()[k], 2);
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const double dy = i + 1 < 32 ? x(i + 1, j) - x(i, j) : 0.0;
        const double dx = j + 1 < 16 ? x(i, j + 1) - x(i, j) : 0.0;
        tv += std::sqrt(dy * dy + dx * dx + cfg.tv_eps * cfg.tv_eps);
      }
    EXPECT_NEAR(t.data, data, 1e-8 * data);
    EXPECT_NEAR(t.prior, cfg.mu1 * prior, 1e-8 * cfg.mu1 * prior);
    EXPECT_NEAR(t.tv, cfg.mu2 * tv, 1e-8 * cfg.mu2 * tv);
    EXPECT_NEAR(t.total(), t.data + t.prior + t.tv, 1e-12 * t.total());
  }
}

TEST(Usdl, TrainingLowersObjective) {
  const data::Normalization norm{2500.0, 10500.0, 0.3};
  const auto truth = data::random_layered_model(32, 32, {}, 6);
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(truth.values, w);
  const auto l = data::lowpass_impedance(truth, 6.0, 0.002);
  UsdlConfig cfg;
  cfg.net.base_width = 8;
  cfg.net.epochs = 30;
  const auto r = usdl_train({d}, {l}, w, norm, cfg, true);
  ASSERT_EQ(r.epoch_terms.size(), 31u);
  EXPECT_LT(r.epoch_terms.back().total(), r.epoch_terms.front().total());
  const auto again = usdl_terms(r.epoch_predictions.back()[0], d, l, w, norm, cfg);
  EXPECT_NEAR(again.total(), r.epoch_terms.back().total(), 1e-9 * again.total());
  EXPECT_EQ(r.predictions.size(), 1u);
  EXPECT_GT(r.predictions[0].values.min(), 0.0);
}

TEST(Sdl, TrainsAndRoundTrips) {
  const data::Normalization norm{2500.0, 10500.0, 0.3};
  const auto w = seis::ricker(30.0, 0.002);
  std::vector<SeismicSection> d;
  std::vector<ImpedanceGrid> l, y;
  for (std::uint64_t i = 0; i < 6; ++i) {
    y.push_back(data::random_layered_model(32, 32, {}, 100 + i));
    d.push_back(seis::synthesize(y.back().values, w));
    l.push_back(data::lowpass_impedance(y.back(), 6.0, 0.002));
  }
  NetTrainConfig cfg;
  cfg.base_width = 8;
  cfg.epochs = 8;
  cfg.batch_size = 3;
  const auto r = sdl_train(d, l, y, norm, cfg);
  ASSERT_EQ(r.epoch_mse.size(), 8u);
  EXPECT_LT(r.epoch_mse.back(), r.epoch_mse.front());

  const fs::path p = fs::temp_directory_path() / ("saii_sdl_" + std::to_string(::getpid()) + ".ckpt");
  r.model.save(p);
  const auto back = BaselineNet::load(p);
  EXPECT_EQ(back.method(), "sdl");
  EXPECT_EQ(sdl_infer(d[0], l[0], back).values, sdl_infer(d[0], l[0], r.model).values);
  fs::remove(p);
}
