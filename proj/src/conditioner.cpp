#include "saii/conditioner.hpp"

#include <algorithm>

#include "saii/error.hpp"

namespace saii::cond {

HaarCoeffs hwt2d(const Array2D& x) {
  if (x.empty()) throw DimensionError("hwt2d: empty input");
  const Array2D p = pad_reflect_to_multiple(x, 2);
  const std::size_t h = p.rows() / 2, w = p.cols() / 2;
  HaarCoeffs c{Array2D(h, w), Array2D(h, w), Array2D(h, w), Array2D(h, w), x.rows(), x.cols()};
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double a = p(2 * i, 2 * j), b = p(2 * i, 2 * j + 1);
      const double cc = p(2 * i + 1, 2 * j), d = p(2 * i + 1, 2 * j + 1);
      c.ll(i, j) = 0.5 * (a + b + cc + d);
      c.lh(i, j) = 0.5 * (a + b - cc - d);
      c.hl(i, j) = 0.5 * (a - b + cc - d);
      c.hh(i, j) = 0.5 * (a - b - cc + d);
    }
  return c;
}

Array2D ihwt2d(const HaarCoeffs& c) {
  if (!c.ll.same_shape(c.lh) || !c.ll.same_shape(c.hl) || !c.ll.same_shape(c.hh))
    throw DimensionError("ihwt2d: subband shape mismatch");
  const std::size_t h = c.ll.rows(), w = c.ll.cols();
  if (c.rows > 2 * h || c.cols > 2 * w || c.rows + 1 < 2 * h || c.cols + 1 < 2 * w)
    throw DimensionError("ihwt2d: recorded dims do not match subbands");
  Array2D p(2 * h, 2 * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double ll = c.ll(i, j), lh = c.lh(i, j), hl = c.hl(i, j), hh = c.hh(i, j);
      p(2 * i, 2 * j) = 0.5 * (ll + lh + hl + hh);
      p(2 * i, 2 * j + 1) = 0.5 * (ll + lh - hl - hh);
      p(2 * i + 1, 2 * j) = 0.5 * (ll - lh + hl - hh);
      p(2 * i + 1, 2 * j + 1) = 0.5 * (ll - lh - hl + hh);
    }
  return crop(p, c.rows, c.cols);
}

void ShwtConfig::validate() const {
  if (levels < 1 || levels > 3) throw ParameterError("SHWT levels must be 1..3");
  if (latent_channels < 1) throw ParameterError("SHWT latent_channels must be >= 1");
  if (width < 1) throw ParameterError("SHWT width must be >= 1");
}

nlohmann::json ShwtConfig::to_json() const {
  return {{"levels", levels}, {"latent_channels", latent_channels}, {"width", width}, {"use_batchnorm", use_batchnorm}};
}

ShwtConfig ShwtConfig::from_json(const nlohmann::json& j) {
  ShwtConfig c;
  c.levels = j.value("levels", c.levels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.width = j.value("width", c.width);
  c.use_batchnorm = j.value("use_batchnorm", c.use_batchnorm);
  return c;
}

std::vector<int> ShwtHead::level_channels() const {
  std::vector<int> out;
  int prev = 1;
  for (int i = 0; i < cfg_.levels; ++i) {
    prev = std::min(4 * prev, cfg_.width);
    out.push_back(prev);
  }
  return out;
}

ShwtHead::ShwtHead(const ShwtConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  int prev = 1;
  for (int out : level_channels()) {
    convs_.emplace_back(4 * prev, out, 3, 1, rng);
    norms_.emplace_back(out);
    prev = out;
  }
  proj_ = nn::Conv2d(prev, cfg_.latent_channels, 1, 1, rng);
}

template <class Self>
nn::Tensor ShwtHead::run(Self& self, const nn::Tensor& d) {
  const int f = 1 << self.cfg_.levels;
  if (d.c() != 1 || d.h() % f != 0 || d.w() % f != 0)
    throw DimensionError("SHWT: input must be [n,1,H,W] with H, W divisible by " + std::to_string(f));
  nn::Tensor h = d;
  for (std::size_t i = 0; i < self.convs_.size(); ++i) {
    h = nn::haar_down(h);
    h = nn::run_layer(self.convs_[i], h);
    if (self.cfg_.use_batchnorm) h = nn::run_layer(self.norms_[i], h);
  }
  h = nn::run_layer(self.proj_, h);
  return nn::run_layer(self.act_, h);
}

nn::Tensor ShwtHead::forward(const nn::Tensor& d) const { return run(*this, d); }

nn::Tensor ShwtHead::forward_train(const nn::Tensor& d) { return run(*this, d); }

void ShwtHead::backward(const nn::Tensor& gy) {
  nn::Tensor g = act_.backward(gy);
  g = proj_.backward(g);
  for (std::size_t k = convs_.size(); k-- > 0;) {
    if (cfg_.use_batchnorm) g = norms_[k].backward(g);
    g = convs_[k].backward(g);
    if (k > 0) g = nn::haar_down_backward(g);
  }
}

void ShwtHead::visit(const std::string& prefix, const nn::Visitor& fn) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].visit(prefix + "conv" + std::to_string(i) + ".", fn);
    norms_[i].visit(prefix + "bn" + std::to_string(i) + ".", fn);
  }
  proj_.visit(prefix + "proj.", fn);
}

void ShwtHead::init_identity() {
  auto set_identity = [](nn::Conv2d& conv, int k) {
    std::fill(conv.weight.value.begin(), conv.weight.value.end(), 0.0f);
    std::fill(conv.bias.value.begin(), conv.bias.value.end(), 0.0f);
    const int cin = conv.in_channels(), cout = conv.out_channels();
    for (int c = 0; c < std::min(cin, cout); ++c)
      conv.weight.value[static_cast<std::size_t>(((c * cin + c) * k + k / 2) * k + k / 2)] = 1.0f;
  };
  for (auto& c : convs_) set_identity(c, 3);
  set_identity(proj_, 1);
}

LatentTensor shwt_forward(const Array2D& d_normalized, const ShwtHead& head) {
  const std::size_t f = std::size_t{1} << head.config().levels;
  const Array2D padded = pad_reflect_to_multiple(d_normalized, f);
  LatentTensor z = LatentTensor::from_tensor(head.forward(to_tensor(padded)), 0, LatentSpace::Seismic);
  z.source_rows = d_normalized.rows();
  z.source_cols = d_normalized.cols();
  return z;
}

}  // namespace saii::cond
