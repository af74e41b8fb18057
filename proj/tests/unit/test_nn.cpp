#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "saii/error.hpp"
#include "saii/nn/blocks.hpp"
#include "saii/nn/checkpoint.hpp"
#include "saii/nn/optim.hpp"

using namespace saii::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, float scale = 1.0f) {
  Tensor t(n, c, h, w);
  std::normal_distribution<float> g(0.0f, scale);
  for (float& v : t.values()) v = g(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data()[i]) * b.data()[i];
  return s;
}

// Checks backward() against central differences of L = <gy, f(x)> for a few
// input entries and a few entries of every trainable parameter.
void check_gradients(Module* module, Tensor x, const std::function<Tensor(const Tensor&)>& fwd_train,
                     const std::function<Tensor(const Tensor&)>& bwd, std::mt19937_64& rng, double tol = 2e-2) {
  const Tensor y0 = fwd_train(x);
  const Tensor gy = random_tensor(y0.n(), y0.c(), y0.h(), y0.w(), rng);
  if (module) zero_grad(*module);
  const Tensor gx = bwd(gy);

  const float h = 1e-2f;
  auto loss_at = [&](const Tensor& xx) { return dot(gy, fwd_train(xx)); };
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (int k = 0; k < 6; ++k) {
    const std::size_t i = pick(rng);
    Tensor xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (loss_at(xp) - loss_at(xm)) / (2.0 * h);
    EXPECT_NEAR(gx.data()[i], fd, tol * (1.0 + std::abs(fd))) << "input index " << i;
  }
  if (!module) return;
  std::vector<std::pair<std::string, Param*>> params;
  module->visit("", [&](const std::string& n, Param& p) {
    if (p.trainable) params.emplace_back(n, &p);
  });
  for (auto& [name, p] : params) {
    const std::vector<float> analytic = p->grad;
    std::uniform_int_distribution<std::size_t> pp(0, p->value.size() - 1);
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = pp(rng);
      const float orig = p->value[i];
      p->value[i] = orig + h;
      const double lp = loss_at(x);
      p->value[i] = orig - h;
      const double lm = loss_at(x);
      p->value[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      EXPECT_NEAR(analytic[i], fd, tol * (1.0 + std::abs(fd))) << name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Conv2d, GradientsStride1Kernel3) {
  std::mt19937_64 rng(1);
  Conv2d conv(3, 4, 3, 1, rng);
  check_gradients(&conv, random_tensor(2, 3, 6, 5, rng), [&](const Tensor& x) { return conv.forward_train(x); },
                  [&](const Tensor& g) { return conv.backward(g); }, rng);
}

TEST(Conv2d, GradientsStride2AndPointwise) {
  std::mt19937_64 rng(2);
  Conv2d down(2, 3, 3, 2, rng);
  check_gradients(&down, random_tensor(2, 2, 8, 8, rng), [&](const Tensor& x) { return down.forward_train(x); },
                  [&](const Tensor& g) { return down.backward(g); }, rng);
  Conv2d pw(3, 2, 1, 1, rng);
  check_gradients(&pw, random_tensor(1, 3, 4, 4, rng), [&](const Tensor& x) { return pw.forward_train(x); },
                  [&](const Tensor& g) { return pw.backward(g); }, rng);
}

TEST(Conv2d, MatchesDirectConvolution) {
  std::mt19937_64 rng(3);
  Conv2d conv(2, 3, 3, 2, rng);
  const Tensor x = random_tensor(2, 2, 7, 6, rng);
  const Tensor y = conv.forward(x);
  ASSERT_EQ(y.h(), 4);
  ASSERT_EQ(y.w(), 3);
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 3; ++co)
      for (int oy = 0; oy < y.h(); ++oy)
        for (int ox = 0; ox < y.w(); ++ox) {
          double acc = conv.bias.value[co];
          for (int ci = 0; ci < 2; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = 2 * oy - 1 + ky, ix = 2 * ox - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += conv.weight.value[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.at(n, ci, iy, ix);
              }
          EXPECT_NEAR(y.at(n, co, oy, ox), acc, 1e-5);
        }
}

TEST(Norms, GroupNormGradients) {
  std::mt19937_64 rng(4);
  GroupNorm gn(4, 2);
  for (float& v : gn.weight.value) v = 1.0f + 0.3f * std::normal_distribution<float>()(rng);
  check_gradients(&gn, random_tensor(2, 4, 3, 3, rng), [&](const Tensor& x) { return gn.forward_train(x); },
                  [&](const Tensor& g) { return gn.backward(g); }, rng);
}

TEST(Norms, BatchNormGradientsAndRunningStats) {
  std::mt19937_64 rng(5);
  BatchNorm2d bn(3);
  check_gradients(&bn, random_tensor(3, 3, 4, 4, rng), [&](const Tensor& x) { return bn.forward_train(x); },
                  [&](const Tensor& g) { return bn.backward(g); }, rng);
  // Eval mode uses the running averages: identical inputs give identical outputs.
  const Tensor x = random_tensor(1, 3, 4, 4, rng);
  EXPECT_EQ(bn.forward(x).values()[0], bn.forward(x).values()[0]);
}

TEST(Layers, LinearAndActivations) {
  std::mt19937_64 rng(6);
  Linear lin(5, 3, rng);
  check_gradients(&lin, random_tensor(4, 5, 1, 1, rng), [&](const Tensor& x) { return lin.forward_train(x); },
                  [&](const Tensor& g) { return lin.backward(g); }, rng);
  SiLU silu;
  check_gradients(nullptr, random_tensor(1, 2, 3, 3, rng), [&](const Tensor& x) { return silu.forward_train(x); },
                  [&](const Tensor& g) { return silu.backward(g); }, rng);
  Tanh th;
  check_gradients(nullptr, random_tensor(1, 2, 3, 3, rng), [&](const Tensor& x) { return th.forward_train(x); },
                  [&](const Tensor& g) { return th.backward(g); }, rng);
}

TEST(Layers, HaarAndUpsampleAdjoints) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor(2, 3, 6, 4, rng);
  const Tensor hx = haar_down(x);
  const Tensor y = random_tensor(hx.n(), hx.c(), hx.h(), hx.w(), rng);
  EXPECT_NEAR(dot(hx, y), dot(x, haar_down_backward(y)), 1e-4);
  // Orthonormal: synthesis inverts analysis.
  const Tensor back = haar_down_backward(hx);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-5);
  EXPECT_NEAR(dot(x, x), dot(hx, hx), 1e-3);

  const Tensor ux = upsample2x(x);
  const Tensor z = random_tensor(ux.n(), ux.c(), ux.h(), ux.w(), rng);
  EXPECT_NEAR(dot(ux, z), dot(x, upsample2x_backward(z)), 1e-4);
}

TEST(Blocks, ResBlockWithTimeEmbedding) {
  std::mt19937_64 rng(8);
  ResBlock block(4, 8, 6, rng);
  // Give the zero-initialized output conv some weight so every path is exercised.
  block.visit("", [&](const std::string& n, Param& p) {
    if (n.rfind("conv2.", 0) == 0)
      for (float& v : p.value) v = 0.1f * std::normal_distribution<float>()(rng);
  });
  const Tensor temb = random_tensor(2, 6, 1, 1, rng);
  Tensor gtemb(2, 6, 1, 1);
  check_gradients(&block, random_tensor(2, 4, 4, 4, rng),
                  [&](const Tensor& x) { return block.forward_train(x, &temb); },
                  [&](const Tensor& g) { return block.backward(g, &gtemb); }, rng);
}

TEST(Blocks, UNetGradientsAndInferenceConsistency) {
  std::mt19937_64 rng(9);
  UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 2;
  cfg.base_width = 8;
  cfg.mults = {1, 2};
  cfg.time_conditioned = true;
  UNet net(cfg, rng);
  net.visit("", [&](const std::string& n, Param& p) {
    if (n.find("conv2.") != std::string::npos || n.rfind("conv_out.", 0) == 0)
      for (float& v : p.value) v = 0.1f * std::normal_distribution<float>()(rng);
  });
  const std::vector<float> t{3.0f, 250.0f};
  const Tensor x = random_tensor(2, 3, 8, 8, rng);
  const Tensor a = net.forward(x, t);
  const Tensor b = net.forward_train(x, t);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_FLOAT_EQ(a.data()[i], b.data()[i]);
  check_gradients(&net, x, [&](const Tensor& xx) { return net.forward_train(xx, t); },
                  [&](const Tensor& g) { return net.backward(g); }, rng, 3e-2);
}

TEST(Optim, AdamMinimizesQuadratic) {
  Param p(3, 5.0f);
  Adam opt({&p}, {.lr = 0.1, .grad_clip = 0.0});
  for (int it = 0; it < 500; ++it) {
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0f * (p.value[i] - static_cast<float>(i));
    opt.step();
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.value[i], static_cast<float>(i), 1e-2);
}

TEST(Checkpoint, RoundTripAndFormatCheck) {
  std::mt19937_64 rng(10);
  UNetConfig cfg;
  cfg.base_width = 4;
  cfg.mults = {1};
  UNet a(cfg, rng), b(cfg, rng);
  const auto path = std::filesystem::temp_directory_path() / "saii_nn_ckpt_test.bin";
  save_container(path, "test/1", {{"note", "x"}}, state_dict(a));
  const auto c = load_container(path, "test/1");
  EXPECT_EQ(c.header.at("note"), "x");
  load_state(b, c.blobs);
  EXPECT_EQ(state_dict(a), state_dict(b));
  EXPECT_THROW(load_container(path, "other/1"), saii::CheckpointMismatch);
  std::filesystem::remove(path);
}
