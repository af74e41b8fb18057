#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "saii/error.hpp"
#include "saii/evalkit.hpp"

using namespace saii;
using namespace saii::eval;
namespace fs = std::filesystem;

namespace {

Array2D random_field(std::size_t m, std::size_t n, std::uint64_t seed, double lo = 3000.0, double hi = 8000.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Array2D a(m, n);
  for (double& v : a.values()) v = u(rng);
  return a;
}

// Per-window weighted statistics with an explicit 2D Gaussian.
double ssim_oracle(const Array2D& x, const Array2D& y, int win, double sigma) {
  const double L = y.max() - y.min();
  const double c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  const int c = win / 2;
  std::vector<double> w(static_cast<std::size_t>(win * win));
  double wsum = 0.0;
  for (int a = 0; a < win; ++a)
    for (int b = 0; b < win; ++b) {
      w[static_cast<std::size_t>(a * win + b)] = std::exp(-((a - c) * (a - c) + (b - c) * (b - c)) / (2 * sigma * sigma));
      wsum += w[static_cast<std::size_t>(a * win + b)];
    }
  for (double& v : w) v /= wsum;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + win <= x.rows(); ++i)
    for (std::size_t j = 0; j + win <= x.cols(); ++j) {
      double mx = 0, my = 0;
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) {
          const double wt = w[static_cast<std::size_t>(a * win + b)];
          mx += wt * x(i + a, j + b);
          my += wt * y(i + a, j + b);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int a = 0; a < win; ++a)
        for (int b = 0; b < win; ++b) {
          const double wt = w[static_cast<std::size_t>(a * win + b)];
          const double dx = x(i + a, j + b) - mx, dy = y(i + a, j + b) - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(Metrics, IdentityIsPerfect) {
  const Array2D a = random_field(40, 30, 1);
  const auto r = evaluate(a, a);
  EXPECT_EQ(r.psnr_db, kPsnrCap);
  EXPECT_EQ(r.ssim, 1.0);
  EXPECT_EQ(r.pcc, 1.0);
  EXPECT_EQ(r.rre, 0.0);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Metrics, SsimMatchesWindowedOracle) {
  const Array2D y = random_field(32, 27, 2);
  Array2D x = y;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (double& v : x.values()) v += 400.0 * g(rng);
  EXPECT_NEAR(ssim(x, y), ssim_oracle(x, y, 11, 1.5), 1e-9);
  const Array2D z = random_field(32, 27, 9);
  EXPECT_NEAR(ssim(z, y), ssim_oracle(z, y, 11, 1.5), 1e-9);
  EXPECT_NEAR(ssim(x, y, {7, 1.0}), ssim_oracle(x, y, 7, 1.0), 1e-9);
}

TEST(Metrics, PsnrPccRreOracles) {
  const Array2D y = random_field(20, 10, 4);
  Array2D x = y;
  double mse = 0.0, num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.data()[i] += (i % 2 ? 50.0 : -30.0);
    const double e = x.data()[i] - y.data()[i];
    mse += e * e;
    num += e * e;
    den += y.data()[i] * y.data()[i];
  }
  mse /= static_cast<double>(x.size());
  const double peak = y.max() - y.min();
  EXPECT_NEAR(psnr(x, y), 10 * std::log10(peak * peak / mse), 1e-10);
  EXPECT_NEAR(rre(x, y), std::sqrt(num / den), 1e-14);

  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1};
  EXPECT_NEAR(pcc(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pcc(a, c), -1.0, 1e-15);
  const std::vector<double> d{1, 0, 0, 1};
  EXPECT_NEAR(pcc(a, d), 0.0, 1e-15);
}

TEST(Metrics, ErrorCases) {
  EXPECT_THROW(psnr(Array2D(4, 4, 1.0), Array2D(4, 5, 1.0)), DimensionError);
  EXPECT_THROW(psnr(Array2D(4, 4, 1.0), Array2D(4, 4, 2.0)), DomainError);
  EXPECT_THROW(ssim(Array2D(5, 5), Array2D(5, 5)), DimensionError);
  const std::vector<double> k(5, 3.0), v{1, 2, 3, 4, 5};
  EXPECT_THROW(pcc(k, v), DomainError);
}

TEST(Metrics, ReportRoundTripAndReconstruction) {
  const Array2D y = random_field(32, 12, 5);
  const auto w = seis::ricker(30.0, 0.002);
  const auto d = seis::synthesize(y, w);
  const auto r = evaluate(y, y, {2, 7}, &d, &w);
  ASSERT_TRUE(r.reconstruction_pcc.has_value());
  EXPECT_NEAR(*r.reconstruction_pcc, 1.0, 1e-12);
  ASSERT_EQ(r.well_pcc.size(), 2u);
  const auto back = MetricReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_THROW(MetricReport::from_json({{"format", "other"}}), ValidationError);
}

TEST(Figures, WritesIndexedFiles) {
  const fs::path dir = fs::temp_directory_path() / ("saii_fig_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  FigureSet set;
  set.truth = random_field(24, 16, 6);
  set.estimates.emplace_back("tv", random_field(24, 16, 7));
  set.well_traces = {3};
  set.charts.push_back({"curve", "t", "x", "y", {1, 2, 3}, {{"a", {1, 4, 9}}}});
  const auto index = emit_figures(set, dir);
  EXPECT_TRUE(fs::exists(dir / "figures.json"));
  std::size_t png = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".png") continue;
    ++png;
    std::ifstream f(e.path(), std::ios::binary);
    char sig[8];
    f.read(sig, 8);
    EXPECT_EQ(std::string(sig + 1, 3), "PNG");
  }
  EXPECT_GE(png, 4u);
  EXPECT_FALSE(index.empty());
  fs::remove_all(dir);
}
