#include "saii/nn/layers.hpp"

#include <cmath>

#include <Eigen/Core>

#include "saii/error.hpp"

namespace saii::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

std::vector<Param*> trainable_params(Module& m) {
  std::vector<Param*> out;
  m.visit("", [&](const std::string&, Param& p) {
    if (p.trainable) out.push_back(&p);
  });
  return out;
}

std::size_t parameter_count(Module& m) {
  std::size_t n = 0;
  for (auto* p : trainable_params(m)) n += p->value.size();
  return n;
}

void zero_grad(Module& m) {
  for (auto* p : trainable_params(m)) p->zero_grad();
}

namespace {

void uniform_fill(std::vector<float>& v, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-bound, bound);
  for (float& x : v) x = u(rng);
}

void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, RowMat& cols) {
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const std::size_t p = static_cast<std::size_t>(n) * ho * wo;
  cols.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(p));
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float* dst = &cols((ch * k + ky) * k + kx, 0);
        for (int i = 0; i < n; ++i) {
          const float* src = x.channel(i, ch);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wo, 0.0f);
              dst += wo;
              continue;
            }
            const float* row = src + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              *dst++ = (ix >= 0 && ix < w) ? row[ix] : 0.0f;
            }
          }
        }
      }
}

void col2im(const RowMat& cols, int k, int stride, int pad, int ho, int wo, Tensor& gx) {
  const int n = gx.n(), c = gx.c(), h = gx.h(), w = gx.w();
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float* src = &cols((ch * k + ky) * k + kx, 0);
        for (int i = 0; i < n; ++i) {
          float* dst = gx.channel(i, ch);
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            float* row = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) row[ix] += *src;
            }
          }
        }
      }
}

// [cout, n*ho*wo] <-> NCHW
void scatter_rows(const RowMat& y, const float* bias, Tensor& out) {
  const std::size_t plane = out.plane();
  for (int i = 0; i < out.n(); ++i)
    for (int co = 0; co < out.c(); ++co) {
      const float* src = &y(co, 0) + static_cast<std::size_t>(i) * plane;
      float* dst = out.channel(i, co);
      const float b = bias ? bias[co] : 0.0f;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
}

RowMat gather_rows(const Tensor& t) {
  const std::size_t plane = t.plane();
  RowMat m(t.c(), static_cast<Eigen::Index>(plane * t.n()));
  for (int i = 0; i < t.n(); ++i)
    for (int co = 0; co < t.c(); ++co)
      std::copy_n(t.channel(i, co), plane, &m(co, 0) + static_cast<std::size_t>(i) * plane);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int cin, int cout, int kernel, int stride, std::mt19937_64& rng, float init_scale)
    : weight(static_cast<std::size_t>(cout) * cin * kernel * kernel),
      bias(static_cast<std::size_t>(cout)),
      cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(kernel / 2) {
  if (kernel % 2 == 0 || stride < 1) throw ParameterError("Conv2d: kernel must be odd and stride >= 1");
  const float bound = 1.0f / std::sqrt(static_cast<float>(cin * kernel * kernel));
  uniform_fill(weight.value, bound * init_scale, rng);
  uniform_fill(bias.value, bound * init_scale, rng);
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c() != cin_) throw DimensionError("Conv2d: input channel mismatch");
  const int ho = out_size(x.h()), wo = out_size(x.w());
  RowMat cols;
  im2col(x, k_, stride_, pad_, ho, wo, cols);
  const ConstRowMap w(weight.value.data(), cout_, static_cast<Eigen::Index>(cin_) * k_ * k_);
  const RowMat y = w * cols;
  Tensor out(x.n(), cout_, ho, wo);
  scatter_rows(y, bias.value.data(), out);
  return out;
}

Tensor Conv2d::forward_train(const Tensor& x) {
  x_ = x;
  return forward(x);
}

Tensor Conv2d::backward(const Tensor& gy) {
  const int ho = gy.h(), wo = gy.w();
  RowMat cols;
  im2col(x_, k_, stride_, pad_, ho, wo, cols);
  const RowMat g = gather_rows(gy);
  const Eigen::Index r = static_cast<Eigen::Index>(cin_) * k_ * k_;
  RowMap gw(weight.grad.data(), cout_, r);
  gw.noalias() += g * cols.transpose();
  for (int co = 0; co < cout_; ++co) bias.grad[static_cast<std::size_t>(co)] += g.row(co).sum();
  const ConstRowMap w(weight.value.data(), cout_, r);
  const RowMat gcols = w.transpose() * g;
  Tensor gx = x_.zeros_like();
  col2im(gcols, k_, stride_, pad_, ho, wo, gx);
  return gx;
}

void Conv2d::visit(const std::string& prefix, const Visitor& fn) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in, int out, std::mt19937_64& rng, float init_scale)
    : weight(static_cast<std::size_t>(in) * out), bias(static_cast<std::size_t>(out)), in_(in), out_(out) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  uniform_fill(weight.value, bound * init_scale, rng);
  uniform_fill(bias.value, bound * init_scale, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.c() * x.h() * x.w() != in_) throw DimensionError("Linear: input size mismatch");
  const ConstRowMap xm(x.data(), x.n(), in_);
  const ConstRowMap w(weight.value.data(), out_, in_);
  Tensor out(x.n(), out_, 1, 1);
  RowMap ym(out.data(), x.n(), out_);
  ym.noalias() = xm * w.transpose();
  for (int i = 0; i < x.n(); ++i)
    for (int o = 0; o < out_; ++o) ym(i, o) += bias.value[static_cast<std::size_t>(o)];
  return out;
}

Tensor Linear::forward_train(const Tensor& x) {
  x_ = x;
  return forward(x);
}

Tensor Linear::backward(const Tensor& gy) {
  const ConstRowMap g(gy.data(), gy.n(), out_);
  const ConstRowMap xm(x_.data(), x_.n(), in_);
  RowMap gw(weight.grad.data(), out_, in_);
  gw.noalias() += g.transpose() * xm;
  for (int o = 0; o < out_; ++o) bias.grad[static_cast<std::size_t>(o)] += g.col(o).sum();
  Tensor gx(x_.n(), x_.c(), x_.h(), x_.w());
  RowMap gxm(gx.data(), x_.n(), in_);
  const ConstRowMap w(weight.value.data(), out_, in_);
  gxm.noalias() = g * w;
  return gx;
}

void Linear::visit(const std::string& prefix, const Visitor& fn) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) over one group.
void norm_backward_group(const float* gy, const float* xhat, const float* gamma_per_elem_channel, std::size_t plane,
                         int c0, int c1, float inv_std, float* gx, float* gw, float* gb) {
  double s1 = 0.0, s2 = 0.0;
  const std::size_t m = plane * static_cast<std::size_t>(c1 - c0);
  for (int ch = c0; ch < c1; ++ch) {
    const float gamma = gamma_per_elem_channel[ch];
    const std::size_t off = static_cast<std::size_t>(ch - c0) * plane;
    double sw = 0.0, sb = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const float g = gy[off + p];
      const float dxh = g * gamma;
      s1 += dxh;
      s2 += dxh * xhat[off + p];
      sw += g * xhat[off + p];
      sb += g;
    }
    gw[ch] += static_cast<float>(sw);
    gb[ch] += static_cast<float>(sb);
  }
  const float m1 = static_cast<float>(s1 / static_cast<double>(m));
  const float m2 = static_cast<float>(s2 / static_cast<double>(m));
  for (int ch = c0; ch < c1; ++ch) {
    const float gamma = gamma_per_elem_channel[ch];
    const std::size_t off = static_cast<std::size_t>(ch - c0) * plane;
    for (std::size_t p = 0; p < plane; ++p)
      gx[off + p] = inv_std * (gy[off + p] * gamma - m1 - xhat[off + p] * m2);
  }
}

}  // namespace

GroupNorm::GroupNorm(int channels, int groups, float eps)
    : weight(static_cast<std::size_t>(channels), 1.0f), bias(static_cast<std::size_t>(channels), 0.0f),
      c_(channels), g_(groups), eps_(eps) {
  if (groups < 1 || channels % groups != 0) throw ParameterError("GroupNorm: channels must divide into groups");
}

Tensor GroupNorm::run(const Tensor& x, Tensor* xhat, std::vector<float>* inv_std) const {
  if (x.c() != c_) throw DimensionError("GroupNorm: channel mismatch");
  Tensor out = x.zeros_like();
  if (xhat) *xhat = x.zeros_like();
  if (inv_std) inv_std->assign(static_cast<std::size_t>(x.n()) * g_, 0.0f);
  const int cg = c_ / g_;
  const std::size_t plane = x.plane();
  const std::size_t m = plane * static_cast<std::size_t>(cg);
  for (int i = 0; i < x.n(); ++i)
    for (int g = 0; g < g_; ++g) {
      const float* src = x.channel(i, g * cg);
      double mean = 0.0, var = 0.0;
      for (std::size_t p = 0; p < m; ++p) mean += src[p];
      mean /= static_cast<double>(m);
      for (std::size_t p = 0; p < m; ++p) var += (src[p] - mean) * (src[p] - mean);
      var /= static_cast<double>(m);
      const float is = static_cast<float>(1.0 / std::sqrt(var + eps_));
      if (inv_std) (*inv_std)[static_cast<std::size_t>(i) * g_ + g] = is;
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch) {
        const float* s = x.channel(i, ch);
        float* d = out.channel(i, ch);
        float* xh = xhat ? xhat->channel(i, ch) : nullptr;
        const float gamma = weight.value[static_cast<std::size_t>(ch)], beta = bias.value[static_cast<std::size_t>(ch)];
        for (std::size_t p = 0; p < plane; ++p) {
          const float v = static_cast<float>((s[p] - mean) * is);
          if (xh) xh[p] = v;
          d[p] = gamma * v + beta;
        }
      }
    }
  return out;
}

Tensor GroupNorm::forward(const Tensor& x) const { return run(x, nullptr, nullptr); }
Tensor GroupNorm::forward_train(const Tensor& x) { return run(x, &xhat_, &inv_std_); }

Tensor GroupNorm::backward(const Tensor& gy) {
  Tensor gx = gy.zeros_like();
  const int cg = c_ / g_;
  for (int i = 0; i < gy.n(); ++i)
    for (int g = 0; g < g_; ++g)
      norm_backward_group(gy.channel(i, g * cg), xhat_.channel(i, g * cg), weight.value.data(), gy.plane(), g * cg,
                          (g + 1) * cg, inv_std_[static_cast<std::size_t>(i) * g_ + g], gx.channel(i, g * cg),
                          weight.grad.data(), bias.grad.data());
  return gx;
}

void GroupNorm::visit(const std::string& prefix, const Visitor& fn) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : weight(static_cast<std::size_t>(channels), 1.0f), bias(static_cast<std::size_t>(channels), 0.0f),
      running_mean(static_cast<std::size_t>(channels), 0.0f, false),
      running_var(static_cast<std::size_t>(channels), 1.0f, false),
      c_(channels), momentum_(momentum), eps_(eps) {}

Tensor BatchNorm2d::forward(const Tensor& x) const {
  if (x.c() != c_) throw DimensionError("BatchNorm2d: channel mismatch");
  Tensor out = x.zeros_like();
  for (int ch = 0; ch < c_; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    const float is = 1.0f / std::sqrt(running_var.value[k] + eps_);
    const float a = weight.value[k] * is, b = bias.value[k] - running_mean.value[k] * a;
    for (int i = 0; i < x.n(); ++i) {
      const float* s = x.channel(i, ch);
      float* d = out.channel(i, ch);
      for (std::size_t p = 0; p < x.plane(); ++p) d[p] = a * s[p] + b;
    }
  }
  return out;
}

Tensor BatchNorm2d::forward_train(const Tensor& x) {
  if (x.c() != c_) throw DimensionError("BatchNorm2d: channel mismatch");
  Tensor out = x.zeros_like();
  xhat_ = x.zeros_like();
  inv_std_.assign(static_cast<std::size_t>(c_), 0.0f);
  const std::size_t m = x.plane() * static_cast<std::size_t>(x.n());
  for (int ch = 0; ch < c_; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < x.n(); ++i)
      for (std::size_t p = 0; p < x.plane(); ++p) mean += x.channel(i, ch)[p];
    mean /= static_cast<double>(m);
    for (int i = 0; i < x.n(); ++i)
      for (std::size_t p = 0; p < x.plane(); ++p) {
        const double d = x.channel(i, ch)[p] - mean;
        var += d * d;
      }
    var /= static_cast<double>(m);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps_));
    inv_std_[k] = is;
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean.value[k] = static_cast<float>((1.0 - momentum_) * running_mean.value[k] + momentum_ * mean);
    running_var.value[k] = static_cast<float>((1.0 - momentum_) * running_var.value[k] + momentum_ * unbiased);
    for (int i = 0; i < x.n(); ++i) {
      const float* s = x.channel(i, ch);
      float* xh = xhat_.channel(i, ch);
      float* d = out.channel(i, ch);
      for (std::size_t p = 0; p < x.plane(); ++p) {
        xh[p] = static_cast<float>((s[p] - mean) * is);
        d[p] = weight.value[k] * xh[p] + bias.value[k];
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
  Tensor gx = gy.zeros_like();
  const std::size_t plane = gy.plane();
  const double m = static_cast<double>(plane) * gy.n();
  for (int ch = 0; ch < c_; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    const float gamma = weight.value[k];
    double s1 = 0.0, s2 = 0.0, sw = 0.0, sb = 0.0;
    for (int i = 0; i < gy.n(); ++i) {
      const float* g = gy.channel(i, ch);
      const float* xh = xhat_.channel(i, ch);
      for (std::size_t p = 0; p < plane; ++p) {
        s1 += g[p] * gamma;
        s2 += g[p] * gamma * xh[p];
        sw += g[p] * xh[p];
        sb += g[p];
      }
    }
    weight.grad[k] += static_cast<float>(sw);
    bias.grad[k] += static_cast<float>(sb);
    const float m1 = static_cast<float>(s1 / m), m2 = static_cast<float>(s2 / m);
    for (int i = 0; i < gy.n(); ++i) {
      const float* g = gy.channel(i, ch);
      const float* xh = xhat_.channel(i, ch);
      float* d = gx.channel(i, ch);
      for (std::size_t p = 0; p < plane; ++p) d[p] = inv_std_[k] * (g[p] * gamma - m1 - xh[p] * m2);
    }
  }
  return gx;
}

void BatchNorm2d::visit(const std::string& prefix, const Visitor& fn) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
  fn(prefix + "running_mean", running_mean);
  fn(prefix + "running_var", running_var);
}

// ---------------------------------------------------------------------------
// Activations

Tensor SiLU::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.values()) v = v / (1.0f + std::exp(-v));
  return y;
}

Tensor SiLU::forward_train(const Tensor& x) {
  x_ = x;
  return forward(x);
}

Tensor SiLU::backward(const Tensor& gy) const {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const float v = x_.data()[i];
    const float s = 1.0f / (1.0f + std::exp(-v));
    gx.data()[i] *= s * (1.0f + v * (1.0f - s));
  }
  return gx;
}

Tensor Tanh::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.values()) v = std::tanh(v);
  return y;
}

Tensor Tanh::forward_train(const Tensor& x) {
  y_ = forward(x);
  return y_;
}

Tensor Tanh::backward(const Tensor& gy) const {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= 1.0f - y_.data()[i] * y_.data()[i];
  return gx;
}

Tensor LeakyReLU::forward(const Tensor& x) const {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : slope_ * v;
  return y;
}

Tensor LeakyReLU::forward_train(const Tensor& x) {
  x_ = x;
  return forward(x);
}

Tensor LeakyReLU::backward(const Tensor& gy) const {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (x_.data()[i] <= 0.0f) gx.data()[i] *= slope_;
  return gx;
}

// ---------------------------------------------------------------------------
// Resampling

Tensor upsample2x(const Tensor& x) {
  Tensor out(x.n(), x.c(), 2 * x.h(), 2 * x.w());
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < x.c(); ++ch) {
      const float* s = x.channel(i, ch);
      float* d = out.channel(i, ch);
      for (int y = 0; y < out.h(); ++y)
        for (int xx = 0; xx < out.w(); ++xx) d[y * out.w() + xx] = s[(y / 2) * x.w() + xx / 2];
    }
  return out;
}

Tensor upsample2x_backward(const Tensor& gy) {
  Tensor gx(gy.n(), gy.c(), gy.h() / 2, gy.w() / 2);
  for (int i = 0; i < gy.n(); ++i)
    for (int ch = 0; ch < gy.c(); ++ch) {
      const float* s = gy.channel(i, ch);
      float* d = gx.channel(i, ch);
      for (int y = 0; y < gy.h(); ++y)
        for (int xx = 0; xx < gy.w(); ++xx) d[(y / 2) * gx.w() + xx / 2] += s[y * gy.w() + xx];
    }
  return gx;
}

Tensor haar_down(const Tensor& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) throw DimensionError("haar_down: spatial dims must be even");
  const int c = x.c(), h2 = x.h() / 2, w2 = x.w() / 2;
  Tensor out(x.n(), 4 * c, h2, w2);
  for (int i = 0; i < x.n(); ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h2; ++y)
        for (int xx = 0; xx < w2; ++xx) {
          const float a = x.at(i, ch, 2 * y, 2 * xx), b = x.at(i, ch, 2 * y, 2 * xx + 1);
          const float cc = x.at(i, ch, 2 * y + 1, 2 * xx), d = x.at(i, ch, 2 * y + 1, 2 * xx + 1);
          out.at(i, ch, y, xx) = 0.5f * (a + b + cc + d);
          out.at(i, c + ch, y, xx) = 0.5f * (a + b - cc - d);
          out.at(i, 2 * c + ch, y, xx) = 0.5f * (a - b + cc - d);
          out.at(i, 3 * c + ch, y, xx) = 0.5f * (a - b - cc + d);
        }
  return out;
}

Tensor haar_down_backward(const Tensor& gy) {
  const int c = gy.c() / 4;
  Tensor gx(gy.n(), c, 2 * gy.h(), 2 * gy.w());
  for (int i = 0; i < gy.n(); ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < gy.h(); ++y)
        for (int xx = 0; xx < gy.w(); ++xx) {
          const float ll = gy.at(i, ch, y, xx), lh = gy.at(i, c + ch, y, xx);
          const float hl = gy.at(i, 2 * c + ch, y, xx), hh = gy.at(i, 3 * c + ch, y, xx);
          gx.at(i, ch, 2 * y, 2 * xx) = 0.5f * (ll + lh + hl + hh);
          gx.at(i, ch, 2 * y, 2 * xx + 1) = 0.5f * (ll + lh - hl - hh);
          gx.at(i, ch, 2 * y + 1, 2 * xx) = 0.5f * (ll - lh + hl - hh);
          gx.at(i, ch, 2 * y + 1, 2 * xx + 1) = 0.5f * (ll - lh - hl + hh);
        }
  return gx;
}

Tensor timestep_embedding(std::span<const float> t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ParameterError("timestep_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  Tensor out(static_cast<int>(t.size()), dim, 1, 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    float* d = out.sample(static_cast<int>(i));
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      d[k] = static_cast<float>(std::sin(t[i] * freq));
      d[half + k] = static_cast<float>(std::cos(t[i] * freq));
    }
  }
  return out;
}

}  // namespace saii::nn
