#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "saii/conditioner.hpp"
#include "saii/error.hpp"

using namespace saii;
using namespace saii::cond;

namespace {

Array2D random_field(std::size_t m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Array2D a(m, n);
  for (double& v : a.values()) v = g(rng);
  return a;
}

double energy(const HaarCoeffs& c) {
  return c.ll.sum_squares() + c.lh.sum_squares() + c.hl.sum_squares() + c.hh.sum_squares();
}

}  // namespace

TEST(Haar, BlockFormula) {
  const Array2D x(2, 2, std::vector<double>{1.0, 2.0, 3.0, 5.0});
  const auto c = hwt2d(x);
  EXPECT_DOUBLE_EQ(c.ll(0, 0), (1 + 2 + 3 + 5) / 2.0);
  EXPECT_DOUBLE_EQ(c.lh(0, 0), (1 + 2 - 3 - 5) / 2.0);
  EXPECT_DOUBLE_EQ(c.hl(0, 0), (1 - 2 + 3 - 5) / 2.0);
  EXPECT_DOUBLE_EQ(c.hh(0, 0), (1 - 2 - 3 + 5) / 2.0);
}

TEST(Haar, RoundTripAndEnergy) {
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{64, 64}, {32, 48}, {33, 17}}) {
    const Array2D x = random_field(m, n, m * 100 + n);
    const auto c = hwt2d(x);
    const Array2D y = ihwt2d(c);
    ASSERT_TRUE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-12);
    if (m % 2 == 0 && n % 2 == 0) EXPECT_NEAR(energy(c), x.sum_squares(), 1e-10 * x.sum_squares());
  }
}

TEST(Haar, PolarityIsExact) {
  const Array2D x = random_field(16, 16, 4);
  Array2D neg = x;
  for (double& v : neg.values()) v = -v;
  const auto a = hwt2d(x), b = hwt2d(neg);
  for (const auto& [p, q] : {std::pair{&a.ll, &b.ll}, {&a.lh, &b.lh}, {&a.hl, &b.hl}, {&a.hh, &b.hh}})
    for (std::size_t i = 0; i < p->size(); ++i) EXPECT_EQ(q->data()[i], -p->data()[i]);
}

TEST(Shwt, OutputGridAndRange) {
  std::mt19937_64 rng(1);
  ShwtHead head(ShwtConfig{}, rng);
  const auto z = shwt_forward(random_field(64, 48, 2), head);
  EXPECT_EQ(z.channels, 3);
  EXPECT_EQ(z.height, 16);
  EXPECT_EQ(z.width, 12);
  EXPECT_EQ(z.space, LatentSpace::Seismic);
  for (double v : z.values) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  const auto odd = shwt_forward(random_field(61, 50, 3), head);
  EXPECT_EQ(odd.height, 16);
  EXPECT_EQ(odd.width, 13);
  EXPECT_EQ(odd.source_rows, 61u);
}

TEST(Shwt, IdentityInitCarriesLowPassChain) {
  std::mt19937_64 rng(1);
  ShwtConfig cfg;
  cfg.use_batchnorm = false;
  ShwtHead head(cfg, rng);
  head.init_identity();
  const Array2D x = random_field(16, 16, 5);
  const auto z = shwt_forward(x, head);
  // Two orthonormal LL stages: sum over each 4x4 block divided by 4.
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      double s = 0.0;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) s += x(static_cast<std::size_t>(4 * by + r), static_cast<std::size_t>(4 * bx + c));
      EXPECT_NEAR(z.at(0, by, bx), std::tanh(s / 4.0), 1e-5);
    }
}

TEST(Shwt, InferenceIsDeterministicAndOddInTanhStage) {
  std::mt19937_64 rng(9);
  ShwtConfig cfg;
  cfg.use_batchnorm = false;
  ShwtHead head(cfg, rng);
  head.init_identity();
  const Array2D x = random_field(32, 32, 6);
  Array2D neg = x;
  for (double& v : neg.values()) v = -v;
  const auto a = shwt_forward(x, head), b = shwt_forward(neg, head);
  EXPECT_EQ(a, shwt_forward(x, head));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.values[i], -a.values[i], 1e-6);
}

TEST(Shwt, ConfigValidation) {
  ShwtConfig bad;
  bad.levels = 0;
  EXPECT_THROW(bad.validate(), Error);
  ShwtConfig c;
  c.width = 12;
  const auto back = ShwtConfig::from_json(c.to_json());
  EXPECT_EQ(back.width, 12);
  EXPECT_EQ(back.levels, c.levels);
}
