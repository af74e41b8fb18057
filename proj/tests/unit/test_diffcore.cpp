#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "saii/diffcore.hpp"
#include "saii/error.hpp"

using namespace saii;
using namespace saii::diff;
namespace fs = std::filesystem;

namespace {

DiffusionConfig tiny_config() {
  DiffusionConfig c;
  c.net.base_width = 8;
  c.net.mults = {1, 2};
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.T = 100;
  return c;
}

DiffusionData toy_data(int n, bool zero_z0) {
  std::mt19937_64 rng(12);
  std::normal_distribution<float> g;
  DiffusionData d{nn::Tensor(n, 3, 8, 8), nn::Tensor(n, 3, 8, 8), nn::Tensor(n, 1, 32, 32)};
  if (!zero_z0)
    for (float& v : d.z0.values()) v = g(rng);
  for (float& v : d.l_z.values()) v = g(rng);
  for (float& v : d.d.values()) v = 0.3f * g(rng);
  return d;
}

LatentTensor probe_eps(const DiffusionModel& m) {
  LatentTensor z(3, 8, 8), l(3, 8, 8);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.values[i] = std::sin(0.3 * i);
    l.values[i] = std::cos(0.2 * i);
  }
  Array2D d(32, 32);
  for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = 0.2 * std::sin(0.05 * i);
  const auto dz = m.denoiser().condition(d);
  return m.denoiser().predict_eps(z, 37, l, dz);
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("saii_diff_" + name + "_" + std::to_string(::getpid()) + ".ckpt");
}

}  // namespace

TEST(Schedule, LinearMatchesProducts) {
  const auto s = make_linear_schedule(1000, 1e-4, 2e-2);
  double ab = 1.0;
  EXPECT_EQ(s.alpha_bar_at(0), 1.0);
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0;
    ab *= 1.0 - beta;
    EXPECT_NEAR(s.beta_at(t), beta, 1e-15);
    EXPECT_NEAR(s.alpha_bar_at(t), ab, 1e-12);
  }
  EXPECT_LT(s.alpha_bar_at(1000), 1e-4);
  EXPECT_EQ(NoiseSchedule::from_json(s.to_json()).alpha_bar, s.alpha_bar);
  EXPECT_THROW(make_linear_schedule(10, 0.5, 0.1), ParameterError);
  EXPECT_THROW(s.alpha_bar_at(1001), ParameterError);
}

TEST(Forward, QSampleInvertsExactly) {
  const auto s = make_linear_schedule();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  LatentTensor z0(3, 6, 5), eps(3, 6, 5);
  for (auto* t : {&z0, &eps})
    for (double& v : t->values) v = g(rng);
  for (int t : {1, 250, 999}) {
    const auto zt = q_sample(z0, t, eps, s);
    const double a = std::sqrt(s.alpha_bar_at(t)), b = std::sqrt(1 - s.alpha_bar_at(t));
    for (std::size_t i = 0; i < zt.size(); ++i) {
      EXPECT_NEAR(zt.values[i], a * z0.values[i] + b * eps.values[i], 1e-14);
      EXPECT_NEAR((zt.values[i] - b * eps.values[i]) / a, z0.values[i], 1e-10);
    }
  }
}

TEST(Forward, MarginalIsUnconditional) {
  const auto report = conditional_marginal_property_check(make_linear_schedule(), 20000, 3);
  EXPECT_TRUE(report.static_check);
  ASSERT_EQ(report.checks.size(), 3u);
  for (const auto& c : report.checks) EXPECT_TRUE(c.pass) << c.t << " " << c.mean << " " << c.variance;
  EXPECT_TRUE(report.pass());
}

TEST(Forward, FixedTimestepAndShapes) {
  const auto s = make_linear_schedule(50);
  std::mt19937_64 rng(2);
  const nn::Tensor z0(4, 3, 8, 8, 0.5f);
  const auto f = draw_forward_noising(z0, s, rng, 17);
  ASSERT_EQ(f.t.size(), 4u);
  for (int t : f.t) EXPECT_EQ(t, 17);
  const auto r = draw_forward_noising(z0, s, rng);
  for (int t : r.t) {
    EXPECT_GE(t, 1);
    EXPECT_LE(t, 50);
  }
}

TEST(Train, LossDecreasesOnLearnableTarget) {
  auto cfg = tiny_config();
  cfg.epochs = 20;
  const auto r = train_diffusion(toy_data(64, true), "codec", cfg);
  ASSERT_EQ(r.losses.size(), 20u);
  EXPECT_EQ(r.epochs_done, 20);
  for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += r.losses[static_cast<std::size_t>(i)];
    tail += r.losses[static_cast<std::size_t>(15 + i)];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Train, DeterministicAndResumable) {
  const auto data = toy_data(8, false);
  const auto cfg = tiny_config();
  const auto full = train_diffusion(data, "codec", cfg);
  const auto again = train_diffusion(data, "codec", cfg);
  EXPECT_EQ(probe_eps(full.model), probe_eps(again.model));

  const fs::path p = temp_path("resume");
  TrainOptions first;
  first.checkpoint_path = p;
  first.checkpoint_every = 1;
  first.max_epochs_this_run = 1;
  const auto half = train_diffusion(data, "codec", cfg, first);
  EXPECT_EQ(half.epochs_done, 1);
  TrainOptions second;
  second.resume_from = p;
  const auto resumed = train_diffusion(data, "codec", cfg, second);
  EXPECT_EQ(resumed.epochs_done, 2);
  const auto a = probe_eps(full.model), b = probe_eps(resumed.model);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-6);

  TrainOptions wrong;
  wrong.resume_from = p;
  EXPECT_THROW(train_diffusion(data, "other", cfg, wrong), CheckpointMismatch);
  fs::remove(p);
}

TEST(Checkpoint, SaveLoadPreservesPredictions) {
  const auto r = train_diffusion(toy_data(8, false), "abc", tiny_config());
  const fs::path p = temp_path("save");
  r.model.save(p);
  const auto back = DiffusionModel::load(p);
  EXPECT_EQ(back.codec_hash(), "abc");
  EXPECT_EQ(back.config().to_json(), r.model.config().to_json());
  EXPECT_EQ(probe_eps(back), probe_eps(r.model));
  fs::remove(p);
}

TEST(Checkpoint, CodecMismatchThrows) {
  const DiffusionModel m(tiny_config(), "not-a-hash");
  const codec::Codec c({}, {2500.0, 10500.0, 0.3});
  EXPECT_THROW(m.require_codec(c), CheckpointMismatch);
  const DiffusionModel ok(tiny_config(), c.hash());
  EXPECT_NO_THROW(ok.require_codec(c));
}

TEST(Config, ValidationAndJson) {
  auto c = tiny_config();
  EXPECT_EQ(DiffusionConfig::from_json(c.to_json()).to_json(), c.to_json());
  c.lr = -1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.beta_end = 2.0;
  EXPECT_THROW(c.validate(), Error);
}
